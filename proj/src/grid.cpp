#include "metamg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace metamg {

namespace {

void require(bool condition, const char* message) {
  if (!condition) throw ContractError(message);
}

// Range of output indices p along one axis for which the input index
// s*p + shift stays inside [0, n_in).
struct AxisRange {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive
};

AxisRange valid_range(std::size_t n_out, std::size_t n_in, std::size_t stride, long shift) {
  // need 0 <= stride*p + shift < n_in
  long lo = 0;
  if (shift < 0) lo = (-shift + static_cast<long>(stride) - 1) / static_cast<long>(stride);
  long hi_incl = (static_cast<long>(n_in) - 1 - shift);
  if (hi_incl < 0) return {0, 0};
  hi_incl /= static_cast<long>(stride);
  long hi = std::min<long>(hi_incl + 1, static_cast<long>(n_out));
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

double dot_unit(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void check_conv_shape(const kernels::ConvShape& s) {
  require(s.taps.dim == s.in_extent.dim && s.in_extent.dim == s.out_extent.dim,
          "convolution: dimension mismatch between kernel and field");
  for (std::size_t a = 0; a < 3; ++a) {
    require(s.taps.n[a] % 2 == 1, "convolution: kernel taps must be odd on every axis");
    require(s.sampling.stride[a] >= 1, "convolution: stride must be >= 1");
  }
}

}  // namespace

Extent Extent::cube(int dim, std::size_t side) {
  if (dim == 2) return grid2(side, side);
  if (dim == 3) return grid3(side, side, side);
  throw ContractError("Extent::cube: dimension must be 2 or 3");
}

std::string Extent::str() const {
  std::ostringstream os;
  if (dim == 3) os << n[0] << "x";
  os << n[1] << "x" << n[2];
  return os.str();
}

Sampling Sampling::uniform(int dim, std::size_t stride, std::size_t offset) {
  Sampling s;
  for (std::size_t a = (dim == 3 ? 0 : 1); a < 3; ++a) {
    s.stride[a] = stride;
    s.offset[a] = offset;
  }
  return s;
}

bool Sampling::is_identity() const {
  for (std::size_t a = 0; a < 3; ++a)
    if (stride[a] != 1 || offset[a] != 0) return false;
  return true;
}

Extent sampled_extent(const Extent& fine, const Sampling& s) {
  Extent out = fine;
  for (std::size_t a = 0; a < 3; ++a) {
    require(fine.n[a] > s.offset[a], "sampled_extent: offset exceeds extent");
    out.n[a] = (fine.n[a] - 1 - s.offset[a]) / s.stride[a] + 1;
  }
  return out;
}

Extent upsampled_extent(const Extent& coarse, const Sampling& s) {
  Extent out = coarse;
  for (std::size_t a = 0; a < 3; ++a) out.n[a] = s.stride[a] * coarse.n[a] + s.offset[a];
  return out;
}

// ---------------------------------------------------------------------------

GridField::GridField(std::size_t channels, Extent extent)
    : channels_(channels), extent_(extent), data_(channels * extent.size(), 0.0) {
  require(extent.dim == 2 || extent.dim == 3, "GridField: dimension must be 2 or 3");
  if (extent.dim == 2) require(extent.n[0] == 1, "GridField: 2D extent must have nz = 1");
}

GridField::GridField(std::size_t channels, Extent extent, std::vector<double> data)
    : GridField(channels, extent) {
  require(data.size() == data_.size(), "GridField: data length != channels * nodes");
  data_ = std::move(data);
}

GridField GridField::channel(std::size_t c) const {
  require(c < channels_, "GridField::channel: index out of range");
  GridField out(1, extent_);
  const std::size_t n = extent_.size();
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(c * n), n, out.data_.begin());
  return out;
}

GridField& GridField::operator+=(const GridField& other) { return axpy(1.0, other); }
GridField& GridField::operator-=(const GridField& other) { return axpy(-1.0, other); }

GridField& GridField::operator*=(double alpha) {
  for (double& v : data_) v *= alpha;
  return *this;
}

GridField& GridField::axpy(double alpha, const GridField& other) {
  require(other.channels_ == channels_ && other.extent_ == extent_,
          "GridField: shape mismatch in elementwise operation");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
  return *this;
}

bool GridField::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

GridField operator+(GridField a, const GridField& b) { return a += b; }
GridField operator-(GridField a, const GridField& b) { return a -= b; }
GridField operator*(double alpha, GridField a) { return a *= alpha; }

double dot(const GridField& a, const GridField& b) {
  require(a.size() == b.size(), "dot: size mismatch");
  return dot_unit(a.data().data(), b.data().data(), a.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: size mismatch");
  return dot_unit(a.data(), b.data(), a.size());
}

double norm2(const GridField& a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------

StencilKernel::StencilKernel(std::size_t out_channels, std::size_t in_channels, Extent taps)
    : out_(out_channels), in_(in_channels), taps_(taps),
      coeffs_(out_channels * in_channels * taps.size(), 0.0) {
  require(taps.dim == 2 || taps.dim == 3, "StencilKernel: dimension must be 2 or 3");
  for (std::size_t a = 0; a < 3; ++a)
    require(taps.n[a] % 2 == 1, "StencilKernel: taps must be odd on every axis");
}

StencilKernel::StencilKernel(std::size_t out_channels, std::size_t in_channels, Extent taps,
                             std::vector<double> coefficients)
    : StencilKernel(out_channels, in_channels, taps) {
  require(coefficients.size() == coeffs_.size(),
          "StencilKernel: coefficient length != out * in * taps");
  coeffs_ = std::move(coefficients);
}

StencilKernel StencilKernel::from_rows2(const std::vector<std::vector<double>>& rows) {
  require(!rows.empty() && !rows.front().empty(), "from_rows2: empty matrix");
  const std::size_t ny = rows.size(), nx = rows.front().size();
  std::vector<double> c;
  c.reserve(ny * nx);
  for (const auto& row : rows) {
    require(row.size() == nx, "from_rows2: ragged rows");
    c.insert(c.end(), row.begin(), row.end());
  }
  return StencilKernel(1, 1, Extent::grid2(ny, nx), std::move(c));
}

StencilKernel StencilKernel::delta(int dim, double value) {
  return StencilKernel(1, 1, Extent::cube(dim, 1), {value});
}

double StencilKernel::offset_value(std::size_t l, std::size_t k, long dz, long dy,
                                   long dx) const {
  const auto r = radius();
  const long tz = dz + static_cast<long>(r[0]);
  const long ty = dy + static_cast<long>(r[1]);
  const long tx = dx + static_cast<long>(r[2]);
  if (tz < 0 || ty < 0 || tx < 0 || tz >= static_cast<long>(taps_.n[0]) ||
      ty >= static_cast<long>(taps_.n[1]) || tx >= static_cast<long>(taps_.n[2]))
    return 0.0;
  return at(l, k, static_cast<std::size_t>(tz), static_cast<std::size_t>(ty),
            static_cast<std::size_t>(tx));
}

double StencilKernel::center(std::size_t l, std::size_t k) const {
  return offset_value(l, k, 0, 0, 0);
}

StencilKernel StencilKernel::padded_to(const Extent& taps) const {
  require(taps.dim == taps_.dim, "padded_to: dimension mismatch");
  for (std::size_t a = 0; a < 3; ++a)
    require(taps.n[a] >= taps_.n[a], "padded_to: target taps smaller than source");
  StencilKernel out(out_, in_, taps);
  const auto r = radius();
  const auto R = out.radius();
  for (std::size_t l = 0; l < out_; ++l)
    for (std::size_t k = 0; k < in_; ++k)
      for (std::size_t z = 0; z < taps_.n[0]; ++z)
        for (std::size_t y = 0; y < taps_.n[1]; ++y)
          for (std::size_t x = 0; x < taps_.n[2]; ++x)
            out.at(l, k, z + R[0] - r[0], y + R[1] - r[1], x + R[2] - r[2]) = at(l, k, z, y, x);
  return out;
}

StencilKernel& StencilKernel::operator*=(double alpha) {
  for (double& c : coeffs_) c *= alpha;
  return *this;
}

// ---------------------------------------------------------------------------

namespace kernels {

void correlate(const ConvShape& s, std::span<const double> kernel, std::span<const double> in,
               std::span<double> out) {
  check_conv_shape(s);
  const auto& ti = s.in_extent.n;
  const auto& to = s.out_extent.n;
  const auto& tp = s.taps.n;
  const std::size_t in_plane = s.in_extent.size(), out_plane = s.out_extent.size();
  const long rz = static_cast<long>(tp[0] / 2), ry = static_cast<long>(tp[1] / 2),
             rx = static_cast<long>(tp[2] / 2);
  const auto& st = s.sampling.stride;
  const auto& of = s.sampling.offset;

  std::size_t kidx = 0;
  for (std::size_t l = 0; l < s.out_channels; ++l) {
    double* out_l = out.data() + l * out_plane;
    for (std::size_t k = 0; k < s.in_channels; ++k) {
      const double* in_k = in.data() + k * in_plane;
      for (std::size_t tz = 0; tz < tp[0]; ++tz) {
        const long shz = static_cast<long>(of[0]) + static_cast<long>(tz) - rz;
        const AxisRange zr = valid_range(to[0], ti[0], st[0], shz);
        for (std::size_t ty = 0; ty < tp[1]; ++ty) {
          const long shy = static_cast<long>(of[1]) + static_cast<long>(ty) - ry;
          const AxisRange yr = valid_range(to[1], ti[1], st[1], shy);
          for (std::size_t tx = 0; tx < tp[2]; ++tx, ++kidx) {
            const double w = kernel[kidx];
            if (w == 0.0) continue;
            const long shx = static_cast<long>(of[2]) + static_cast<long>(tx) - rx;
            const AxisRange xr = valid_range(to[2], ti[2], st[2], shx);
            if (xr.hi <= xr.lo) continue;
            for (std::size_t z = zr.lo; z < zr.hi; ++z) {
              const std::size_t iz = static_cast<std::size_t>(static_cast<long>(st[0] * z) + shz);
              for (std::size_t y = yr.lo; y < yr.hi; ++y) {
                const std::size_t iy = static_cast<std::size_t>(static_cast<long>(st[1] * y) + shy);
                double* orow = out_l + (z * to[1] + y) * to[2];
                const double* irow = in_k + (iz * ti[1] + iy) * ti[2];
                if (st[2] == 1) {
                  const double* src = irow + shx;
                  for (std::size_t x = xr.lo; x < xr.hi; ++x) orow[x] += w * src[x];
                } else {
                  for (std::size_t x = xr.lo; x < xr.hi; ++x)
                    orow[x] += w * irow[static_cast<long>(st[2] * x) + shx];
                }
              }
            }
          }
        }
      }
    }
  }
}

void correlate_input_adjoint(const ConvShape& s, std::span<const double> kernel,
                             std::span<const double> out_grad, std::span<double> in_grad) {
  check_conv_shape(s);
  const auto& ti = s.in_extent.n;
  const auto& to = s.out_extent.n;
  const auto& tp = s.taps.n;
  const std::size_t in_plane = s.in_extent.size(), out_plane = s.out_extent.size();
  const long rz = static_cast<long>(tp[0] / 2), ry = static_cast<long>(tp[1] / 2),
             rx = static_cast<long>(tp[2] / 2);
  const auto& st = s.sampling.stride;
  const auto& of = s.sampling.offset;

  std::size_t kidx = 0;
  for (std::size_t l = 0; l < s.out_channels; ++l) {
    const double* og_l = out_grad.data() + l * out_plane;
    for (std::size_t k = 0; k < s.in_channels; ++k) {
      double* ig_k = in_grad.data() + k * in_plane;
      for (std::size_t tz = 0; tz < tp[0]; ++tz) {
        const long shz = static_cast<long>(of[0]) + static_cast<long>(tz) - rz;
        const AxisRange zr = valid_range(to[0], ti[0], st[0], shz);
        for (std::size_t ty = 0; ty < tp[1]; ++ty) {
          const long shy = static_cast<long>(of[1]) + static_cast<long>(ty) - ry;
          const AxisRange yr = valid_range(to[1], ti[1], st[1], shy);
          for (std::size_t tx = 0; tx < tp[2]; ++tx, ++kidx) {
            const double w = kernel[kidx];
            if (w == 0.0) continue;
            const long shx = static_cast<long>(of[2]) + static_cast<long>(tx) - rx;
            const AxisRange xr = valid_range(to[2], ti[2], st[2], shx);
            if (xr.hi <= xr.lo) continue;
            for (std::size_t z = zr.lo; z < zr.hi; ++z) {
              const std::size_t iz = static_cast<std::size_t>(static_cast<long>(st[0] * z) + shz);
              for (std::size_t y = yr.lo; y < yr.hi; ++y) {
                const std::size_t iy = static_cast<std::size_t>(static_cast<long>(st[1] * y) + shy);
                const double* orow = og_l + (z * to[1] + y) * to[2];
                double* irow = ig_k + (iz * ti[1] + iy) * ti[2];
                if (st[2] == 1) {
                  double* dst = irow + shx;
                  for (std::size_t x = xr.lo; x < xr.hi; ++x) dst[x] += w * orow[x];
                } else {
                  for (std::size_t x = xr.lo; x < xr.hi; ++x)
                    irow[static_cast<long>(st[2] * x) + shx] += w * orow[x];
                }
              }
            }
          }
        }
      }
    }
  }
}

void correlate_kernel_adjoint(const ConvShape& s, std::span<const double> in,
                              std::span<const double> out_grad, std::span<double> kernel_grad) {
  check_conv_shape(s);
  const auto& ti = s.in_extent.n;
  const auto& to = s.out_extent.n;
  const auto& tp = s.taps.n;
  const std::size_t in_plane = s.in_extent.size(), out_plane = s.out_extent.size();
  const long rz = static_cast<long>(tp[0] / 2), ry = static_cast<long>(tp[1] / 2),
             rx = static_cast<long>(tp[2] / 2);
  const auto& st = s.sampling.stride;
  const auto& of = s.sampling.offset;

  std::size_t kidx = 0;
  for (std::size_t l = 0; l < s.out_channels; ++l) {
    const double* og_l = out_grad.data() + l * out_plane;
    for (std::size_t k = 0; k < s.in_channels; ++k) {
      const double* in_k = in.data() + k * in_plane;
      for (std::size_t tz = 0; tz < tp[0]; ++tz) {
        const long shz = static_cast<long>(of[0]) + static_cast<long>(tz) - rz;
        const AxisRange zr = valid_range(to[0], ti[0], st[0], shz);
        for (std::size_t ty = 0; ty < tp[1]; ++ty) {
          const long shy = static_cast<long>(of[1]) + static_cast<long>(ty) - ry;
          const AxisRange yr = valid_range(to[1], ti[1], st[1], shy);
          for (std::size_t tx = 0; tx < tp[2]; ++tx, ++kidx) {
            const long shx = static_cast<long>(of[2]) + static_cast<long>(tx) - rx;
            const AxisRange xr = valid_range(to[2], ti[2], st[2], shx);
            if (xr.hi <= xr.lo) continue;
            double acc = 0.0;
            for (std::size_t z = zr.lo; z < zr.hi; ++z) {
              const std::size_t iz = static_cast<std::size_t>(static_cast<long>(st[0] * z) + shz);
              for (std::size_t y = yr.lo; y < yr.hi; ++y) {
                const std::size_t iy = static_cast<std::size_t>(static_cast<long>(st[1] * y) + shy);
                const double* orow = og_l + (z * to[1] + y) * to[2];
                const double* irow = in_k + (iz * ti[1] + iy) * ti[2];
                if (st[2] == 1) {
                  acc += dot_unit(orow + xr.lo, irow + shx + static_cast<long>(xr.lo),
                                  xr.hi - xr.lo);
                } else {
                  for (std::size_t x = xr.lo; x < xr.hi; ++x)
                    acc += orow[x] * irow[static_cast<long>(st[2] * x) + shx];
                }
              }
            }
            kernel_grad[kidx] += acc;
          }
        }
      }
    }
  }
}

void upsample(std::size_t channels, const Extent& coarse, const Extent& fine, const Sampling& s,
              std::span<const double> in, std::span<double> out) {
  const auto& c = coarse.n;
  const auto& f = fine.n;
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t z = 0; z < c[0]; ++z)
      for (std::size_t y = 0; y < c[1]; ++y)
        for (std::size_t x = 0; x < c[2]; ++x) {
          const std::size_t fz = s.stride[0] * z + s.offset[0];
          const std::size_t fy = s.stride[1] * y + s.offset[1];
          const std::size_t fx = s.stride[2] * x + s.offset[2];
          if (fz >= f[0] || fy >= f[1] || fx >= f[2]) continue;
          out[((ch * f[0] + fz) * f[1] + fy) * f[2] + fx] +=
              in[((ch * c[0] + z) * c[1] + y) * c[2] + x];
        }
}

void subsample(std::size_t channels, const Extent& fine, const Extent& coarse, const Sampling& s,
               std::span<const double> in, std::span<double> out) {
  const auto& c = coarse.n;
  const auto& f = fine.n;
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t z = 0; z < c[0]; ++z)
      for (std::size_t y = 0; y < c[1]; ++y)
        for (std::size_t x = 0; x < c[2]; ++x) {
          const std::size_t fz = s.stride[0] * z + s.offset[0];
          const std::size_t fy = s.stride[1] * y + s.offset[1];
          const std::size_t fx = s.stride[2] * x + s.offset[2];
          if (fz >= f[0] || fy >= f[1] || fx >= f[2]) continue;
          out[((ch * c[0] + z) * c[1] + y) * c[2] + x] +=
              in[((ch * f[0] + fz) * f[1] + fy) * f[2] + fx];
        }
}

}  // namespace kernels

// ---------------------------------------------------------------------------

namespace {

void check_kernel_field(const StencilKernel& kernel, const GridField& v) {
  require(kernel.in_channels() == v.channels(),
          "convolution: kernel in_channels != field channels");
  require(kernel.dim() == v.dim(), "convolution: kernel and field dimensions differ");
}

}  // namespace

GridField conv(const StencilKernel& kernel, const GridField& v) {
  return conv_strided(kernel, v, Sampling{});
}

GridField conv_strided(const StencilKernel& kernel, const GridField& v, const Sampling& s) {
  check_kernel_field(kernel, v);
  const Extent out_ext = sampled_extent(v.extent(), s);
  GridField out(kernel.out_channels(), out_ext);
  kernels::correlate({kernel.out_channels(), kernel.in_channels(), kernel.taps(), v.extent(),
                      out_ext, s},
                     kernel.coefficients(), v.data(), out.data());
  return out;
}

GridField conv_strided(const StencilKernel& kernel, const GridField& v, std::size_t stride,
                       std::size_t offset) {
  return conv_strided(kernel, v, Sampling::uniform(v.dim(), stride, offset));
}

GridField upsample(const GridField& v, const Sampling& s) {
  const Extent fine = upsampled_extent(v.extent(), s);
  GridField out(v.channels(), fine);
  kernels::upsample(v.channels(), v.extent(), fine, s, v.data(), out.data());
  return out;
}

GridField subsample(const GridField& fine, const Sampling& s) {
  const Extent coarse = sampled_extent(fine.extent(), s);
  GridField out(fine.channels(), coarse);
  kernels::subsample(fine.channels(), fine.extent(), coarse, s, fine.data(), out.data());
  return out;
}

GridField deconv(const StencilKernel& kernel, const GridField& v, const Sampling& s) {
  check_kernel_field(kernel, v);
  return conv(kernel, upsample(v, s));
}

GridField deconv(const StencilKernel& kernel, const GridField& v, std::size_t stride,
                 std::size_t offset) {
  return deconv(kernel, v, Sampling::uniform(v.dim(), stride, offset));
}

}  // namespace metamg
