#pragma once

// Dense node fields on uniform 2D/3D grids and the three convolution
// primitives used to express every operator in the solver.
//
// Layout conventions:
//   * Spatial shapes are stored as (z, y, x) with x the innermost axis. A
//     2D shape keeps z = 1 so that every kernel below is written once.
//   * Fields are channel-major: data[((c * nz + z) * ny + y) * nx + x].
//   * Kernels are indexed K[l][k][tz][ty][tx] (out channel, in channel,
//     taps) and are always centered: tap t along an axis reads offset
//     t - taps / 2.
//   * Out-of-range field entries read as zero (homogeneous Dirichlet).

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace metamg {

/// Raised when arguments violate a documented precondition.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a linear system cannot be factorized.
class SingularError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Spatial shape of a grid or a stencil, stored as (z, y, x).
struct Extent {
  int dim = 2;
  std::array<std::size_t, 3> n{1, 1, 1};

  static Extent grid2(std::size_t ny, std::size_t nx) { return {2, {1, ny, nx}}; }
  static Extent grid3(std::size_t nz, std::size_t ny, std::size_t nx) {
    return {3, {nz, ny, nx}};
  }
  /// Square (cube) extent with `side` nodes per axis.
  static Extent cube(int dim, std::size_t side);

  std::size_t size() const { return n[0] * n[1] * n[2]; }
  std::size_t operator[](std::size_t axis) const { return n[axis]; }
  /// First axis index that is active for this dimension (0 in 3D, 1 in 2D).
  std::size_t first_axis() const { return dim == 3 ? 0 : 1; }

  bool operator==(const Extent&) const = default;
  std::string str() const;
};

/// Per-axis subsampling pattern for strided convolution. Output index p
/// along an axis reads input index stride * p + offset + (tap offset).
struct Sampling {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> offset{0, 0, 0};

  /// The same stride/offset on every active axis of `dim`.
  static Sampling uniform(int dim, std::size_t stride, std::size_t offset = 0);
  bool is_identity() const;
};

/// Extent produced by sampling `fine` with `s`.
Extent sampled_extent(const Extent& fine, const Sampling& s);
/// Extent a coarse field is scattered into by `upsample` with `s`.
Extent upsampled_extent(const Extent& coarse, const Sampling& s);

/// Multi-channel array of node values on a uniform grid.
class GridField {
 public:
  GridField() = default;
  GridField(std::size_t channels, Extent extent);
  GridField(std::size_t channels, Extent extent, std::vector<double> data);

  static GridField zeros_like(const GridField& other) {
    return GridField(other.channels(), other.extent());
  }

  std::size_t channels() const { return channels_; }
  const Extent& extent() const { return extent_; }
  int dim() const { return extent_.dim; }
  std::size_t size() const { return data_.size(); }
  std::size_t nodes() const { return extent_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& at(std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
    return data_[index(c, z, y, x)];
  }
  double at(std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
    return data_[index(c, z, y, x)];
  }
  /// 2D convenience accessor (single z slice).
  double& operator()(std::size_t c, std::size_t y, std::size_t x) { return at(c, 0, y, x); }
  double operator()(std::size_t c, std::size_t y, std::size_t x) const { return at(c, 0, y, x); }

  /// One channel as a standalone single-channel field.
  GridField channel(std::size_t c) const;

  GridField& operator+=(const GridField& other);
  GridField& operator-=(const GridField& other);
  GridField& operator*=(double alpha);
  /// this += alpha * other
  GridField& axpy(double alpha, const GridField& other);

  bool all_finite() const;

 private:
  std::size_t index(std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
    return ((c * extent_.n[0] + z) * extent_.n[1] + y) * extent_.n[2] + x;
  }

  std::size_t channels_ = 0;
  Extent extent_;
  std::vector<double> data_;
};

GridField operator+(GridField a, const GridField& b);
GridField operator-(GridField a, const GridField& b);
GridField operator*(double alpha, GridField a);

double dot(const GridField& a, const GridField& b);
/// Same summation order as the field overload.
double dot(std::span<const double> a, std::span<const double> b);
double norm2(const GridField& a);

/// Centered convolution kernel K[l][k][tz][ty][tx].
class StencilKernel {
 public:
  StencilKernel() = default;
  StencilKernel(std::size_t out_channels, std::size_t in_channels, Extent taps);
  StencilKernel(std::size_t out_channels, std::size_t in_channels, Extent taps,
                std::vector<double> coefficients);

  /// Single-channel kernel from a row-major 2D tap matrix.
  static StencilKernel from_rows2(const std::vector<std::vector<double>>& rows);
  /// Single-channel 1x1(x1) kernel with value `value`.
  static StencilKernel delta(int dim, double value = 1.0);

  std::size_t out_channels() const { return out_; }
  std::size_t in_channels() const { return in_; }
  const Extent& taps() const { return taps_; }
  int dim() const { return taps_.dim; }
  std::size_t size() const { return coeffs_.size(); }
  /// Per-axis half width (taps / 2).
  std::array<std::size_t, 3> radius() const {
    return {taps_.n[0] / 2, taps_.n[1] / 2, taps_.n[2] / 2};
  }

  std::span<double> coefficients() { return coeffs_; }
  std::span<const double> coefficients() const { return coeffs_; }
  std::vector<double>& values() { return coeffs_; }
  const std::vector<double>& values() const { return coeffs_; }

  double& at(std::size_t l, std::size_t k, std::size_t tz, std::size_t ty, std::size_t tx) {
    return coeffs_[index(l, k, tz, ty, tx)];
  }
  double at(std::size_t l, std::size_t k, std::size_t tz, std::size_t ty, std::size_t tx) const {
    return coeffs_[index(l, k, tz, ty, tx)];
  }
  /// Coefficient at a signed offset from the center (0 if outside the taps).
  double offset_value(std::size_t l, std::size_t k, long dz, long dy, long dx) const;
  /// Coefficient at the center tap.
  double center(std::size_t l = 0, std::size_t k = 0) const;

  /// Same operator re-centered on a larger odd tap extent (zeros outside).
  StencilKernel padded_to(const Extent& taps) const;

  StencilKernel& operator*=(double alpha);

 private:
  std::size_t index(std::size_t l, std::size_t k, std::size_t tz, std::size_t ty,
                    std::size_t tx) const {
    return (((l * in_ + k) * taps_.n[0] + tz) * taps_.n[1] + ty) * taps_.n[2] + tx;
  }

  std::size_t out_ = 0;
  std::size_t in_ = 0;
  Extent taps_;
  std::vector<double> coeffs_;
};

/// (K * v)_{l,p} = sum_k sum_t K_{l,k,t} v_{k,p+t}, zero padded.
GridField conv(const StencilKernel& kernel, const GridField& v);

/// (K *_s v)_{l,p} = sum_k sum_t K_{l,k,t} v_{k, s*p + o + t}.
GridField conv_strided(const StencilKernel& kernel, const GridField& v, const Sampling& s);
GridField conv_strided(const StencilKernel& kernel, const GridField& v, std::size_t stride,
                       std::size_t offset = 0);

/// Zero insertion: coarse value p lands on fine index s*p + o.
GridField upsample(const GridField& v, const Sampling& s);
/// Adjoint of `upsample`: gathers the fine entries at s*p + o.
GridField subsample(const GridField& fine, const Sampling& s);

/// Transposed convolution defined as conv(K, upsample(v)).
GridField deconv(const StencilKernel& kernel, const GridField& v, const Sampling& s);
GridField deconv(const StencilKernel& kernel, const GridField& v, std::size_t stride,
                 std::size_t offset = 0);

namespace kernels {

// Raw-buffer forms of the convolution and its two adjoints. All three
// accumulate into their output buffer. The taped differentiation layer and
// the plain GridField API both go through these, so the two paths agree
// bit for bit.

struct ConvShape {
  std::size_t out_channels;
  std::size_t in_channels;
  Extent taps;
  Extent in_extent;
  Extent out_extent;
  Sampling sampling;
};

void correlate(const ConvShape& shape, std::span<const double> kernel,
               std::span<const double> in, std::span<double> out);
void correlate_input_adjoint(const ConvShape& shape, std::span<const double> kernel,
                             std::span<const double> out_grad, std::span<double> in_grad);
void correlate_kernel_adjoint(const ConvShape& shape, std::span<const double> in,
                              std::span<const double> out_grad, std::span<double> kernel_grad);

void upsample(std::size_t channels, const Extent& coarse, const Extent& fine, const Sampling& s,
              std::span<const double> in, std::span<double> out);
void subsample(std::size_t channels, const Extent& fine, const Extent& coarse, const Sampling& s,
               std::span<const double> in, std::span<double> out);

}  // namespace kernels

}  // namespace metamg
