#include "metamg/mgnet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace metamg {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

std::string join(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::pde_mgnet: return "pde_mgnet";
    case ModelKind::meta_sc: return "meta_sc";
    case ModelKind::meta_direct: return "meta_direct";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "mgnet" || s == "pde_mgnet") return ModelKind::pde_mgnet;
  if (s == "meta_sc" || s == "sc") return ModelKind::meta_sc;
  if (s == "meta_direct" || s == "meta_d" || s == "direct") return ModelKind::meta_direct;
  throw ContractError("unknown model kind '" + name + "'");
}

std::size_t NetArch::stencil_inputs() const { return ipow(3, dim); }
std::size_t NetArch::kernel_size() const { return ipow(taps, dim); }

std::size_t NetArch::gamma_size() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layers; ++i) n += growth * (1 + i * growth) * kernel_size();
  return n;
}

std::size_t NetArch::direct_features() const { return stencil_inputs() + ipow(pool_bins, dim); }

Extent NetArch::tap_extent() const { return Extent::cube(dim, taps); }

void NetArch::validate() const {
  require(dim == 2 || dim == 3, "NetArch: dim must be 2 or 3");
  require(levels >= 2, "NetArch: need at least two levels");
  require(nu.size() + 1 >= levels, "NetArch: nu must cover every smoothed level");
  for (std::size_t l = 0; l + 1 < levels; ++l) require(nu[l] >= 1, "NetArch: nu entries must be >= 1");
  require(taps % 2 == 1, "NetArch: taps must be odd");
  require(hidden >= 1 && growth >= 1 && layers >= 1 && pool_bins >= 1,
          "NetArch: widths must be positive");
}

std::map<std::string, std::string> NetArch::to_metadata() const {
  std::vector<std::size_t> used(nu.begin(), nu.begin() + static_cast<long>(levels - 1));
  return {{"kind", to_string(kind)},
          {"dim", std::to_string(dim)},
          {"levels", std::to_string(levels)},
          {"nu", join(used)},
          {"taps", std::to_string(taps)},
          {"hidden", std::to_string(hidden)},
          {"growth", std::to_string(growth)},
          {"layers", std::to_string(layers)},
          {"pool_bins", std::to_string(pool_bins)}};
}

NetArch NetArch::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const char* key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw ContractError(std::string("model metadata lacks '") + key + "'");
    return it->second;
  };
  NetArch a;
  a.kind = parse_model_kind(get("kind"));
  a.dim = std::stoi(get("dim"));
  a.levels = std::stoul(get("levels"));
  a.nu = split_sizes(get("nu"));
  a.taps = std::stoul(get("taps"));
  a.hidden = std::stoul(get("hidden"));
  a.growth = std::stoul(get("growth"));
  a.layers = std::stoul(get("layers"));
  a.pool_bins = std::stoul(get("pool_bins"));
  a.validate();
  return a;
}

std::string smoother_param_name(std::size_t level, std::size_t step) {
  return "smoother.l" + std::to_string(level) + ".s" + std::to_string(step);
}

ModelParams make_model(const NetArch& arch) {
  arch.validate();
  ModelParams p;
  p.metadata = arch.to_metadata();
  const std::size_t t = arch.taps;
  const std::vector<std::size_t> tap_shape =
      arch.dim == 2 ? std::vector<std::size_t>{t, t} : std::vector<std::size_t>{t, t, t};
  switch (arch.kind) {
    case ModelKind::pde_mgnet:
      for (std::size_t l = 0; l + 1 < arch.levels; ++l)
        for (std::size_t i = 0; i < arch.nu[l]; ++i) p.add(smoother_param_name(l, i), tap_shape);
      break;
    case ModelKind::meta_sc:
      p.add("fc1.weight", {arch.hidden, arch.stencil_inputs()});
      p.add("fc1.bias", {arch.hidden});
      p.add("fc2.weight", {arch.gamma_size(), arch.hidden});
      p.add("fc2.bias", {arch.gamma_size()});
      break;
    case ModelKind::meta_direct:
      p.add("fc1.weight", {arch.hidden, arch.direct_features()});
      p.add("fc1.bias", {arch.hidden});
      p.add("fc2.weight", {arch.hidden, arch.hidden});
      p.add("fc2.bias", {arch.hidden});
      p.add("fc3.weight", {arch.kernel_size(), arch.hidden});
      p.add("fc3.bias", {arch.kernel_size()});
      break;
  }
  return p;
}

NetArch model_arch(const ModelParams& params) { return NetArch::from_metadata(params.metadata); }

std::vector<double> normalized_stencil_features(const StencilKernel& a) {
  require(a.out_channels() == 1 && a.in_channels() == 1, "stencil features: single-channel operator expected");
  for (std::size_t ax = a.taps().first_axis(); ax < 3; ++ax)
    require(a.taps().n[ax] <= 3, "stencil features: operator taps must not exceed 3 per axis");
  const StencilKernel p = a.padded_to(Extent::cube(a.dim(), 3));
  std::vector<double> v = p.values();
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  require(m > 0.0, "stencil features: zero operator");
  for (double& x : v) x /= m;
  return v;
}

// ---------------------------------------------------------------------------

TapedModel::TapedModel(ad::Tape& tape, const ModelParams& params, ModelParams* grads)
    : tape_(tape), params_(params), grads_(grads), arch_(model_arch(params)) {}

ad::Var TapedModel::bind(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  ad::Var v = grads_ ? tape_.parameter(grads_->get(name)) : tape_.constant(params_.get(name).values);
  bound_.emplace(name, v);
  return v;
}

ad::Var TapedModel::gamma(const StencilKernel& a) {
  require(arch_.kind == ModelKind::meta_sc, "gamma: model is not meta_sc");
  std::vector<double> feats = normalized_stencil_features(a);
  for (const auto& [key, var] : gamma_cache_)
    if (key == feats) return var;
  const ad::Var x = tape_.constant(feats);
  const ad::Var h = ad::relu(tape_, ad::linear(tape_, bind("fc1.weight"), bind("fc1.bias"), x,
                                               arch_.hidden, arch_.stencil_inputs()));
  const ad::Var g =
      ad::linear(tape_, bind("fc2.weight"), bind("fc2.bias"), h, arch_.gamma_size(), arch_.hidden);
  for (double v : tape_.value(g))
    if (!std::isfinite(v)) throw NonFiniteError("hypernetwork produced non-finite weights");
  gamma_cache_.emplace_back(std::move(feats), g);
  return g;
}

ad::Var TapedModel::dense_block(ad::Var gamma, ad::Var r, const Extent& extent) {
  ad::Var x = r;
  std::size_t off = 0;
  for (std::size_t i = 0; i < arch_.layers; ++i) {
    const std::size_t in = 1 + i * arch_.growth;
    const kernels::ConvShape shape{arch_.growth, in, arch_.tap_extent(), extent, extent, Sampling{}};
    const std::size_t len = arch_.growth * in * arch_.kernel_size();
    const ad::Var k = ad::slice(tape_, gamma, off, len);
    off += len;
    const ad::Var y = ad::conv(tape_, k, x, shape);
    x = ad::concat(tape_, {x, y});
  }
  return x;
}

ad::Var TapedModel::direct_kernel(const StencilKernel& a, ad::Var r, const Extent& extent) {
  require(arch_.kind == ModelKind::meta_direct, "direct_kernel: model is not meta_direct");
  const ad::Var s = tape_.constant(normalized_stencil_features(a));
  const ad::Var pooled = ad::scale(
      tape_, ad::avg_pool(tape_, ad::normalize(tape_, r), extent, arch_.pool_bins),
      std::sqrt(static_cast<double>(extent.size())));
  const ad::Var x = ad::concat(tape_, {s, pooled});
  const std::size_t H = arch_.hidden;
  ad::Var h = ad::relu(tape_, ad::linear(tape_, bind("fc1.weight"), bind("fc1.bias"), x, H,
                                         arch_.direct_features()));
  h = ad::relu(tape_, ad::linear(tape_, bind("fc2.weight"), bind("fc2.bias"), h, H, H));
  const ad::Var k = ad::linear(tape_, bind("fc3.weight"), bind("fc3.bias"), h, arch_.kernel_size(), H);
  for (double v : tape_.value(k))
    if (!std::isfinite(v)) throw NonFiniteError("direct smoother network produced non-finite kernel");
  return k;
}

ad::Var TapedModel::smooth(const LevelOperator& a, const Extent& extent, ad::Var r, std::size_t step) {
  const kernels::ConvShape single{1, 1, arch_.tap_extent(), extent, extent, Sampling{}};
  switch (arch_.kind) {
    case ModelKind::pde_mgnet:
      return ad::conv(tape_, bind(smoother_param_name(a.level, step)), r, single);
    case ModelKind::meta_sc: {
      if (all_zero(tape_.value(r))) return tape_.constant(std::vector<double>(extent.size(), 0.0));
      const ad::Var g = dense_block(gamma(a.stencil), r, extent);
      return ad::subspace_correction(tape_, g, r, arch_.subspace_columns(), a.stencil, extent);
    }
    case ModelKind::meta_direct: {
      if (all_zero(tape_.value(r))) return tape_.constant(std::vector<double>(extent.size(), 0.0));
      return ad::conv(tape_, direct_kernel(a.stencil, r, extent), r, single);
    }
  }
  return {};
}

ad::Var taped_cycle(ad::Tape& tape, ad::Var f, const Hierarchy& h, TapedModel& model,
                    const MgConfig& config) {
  const std::size_t J = config.levels;
  require(J == h.levels(), "taped_cycle: config levels != hierarchy levels");
  std::vector<ad::Var> u(J);
  ad::Var rhs = f;
  for (std::size_t l = 0; l + 1 < J; ++l) {
    const LevelOperator& a = h.op(l);
    const Extent& ext = h.extent(l);
    ad::Var r = rhs;
    for (std::size_t i = 0; i < config.smoothing_steps(l); ++i) {
      const ad::Var e = model.smooth(a, ext, r, i);
      u[l] = i == 0 ? e : ad::add(tape, u[l], e);
      r = ad::sub(tape, rhs, ad::conv_fixed(tape, a.stencil, u[l], ext));
    }
    rhs = ad::conv_fixed(tape, h.restriction(), r, ext, h.sampling());
  }
  u[J - 1] = ad::coarse_solve(tape, rhs, h.shared_coarse_solver());
  for (std::size_t l = J - 1; l-- > 0;)
    u[l] = ad::add(tape, u[l], ad::deconv_fixed(tape, h.prolongation(), u[l + 1], h.extent(l + 1),
                                                h.sampling()));
  return u[0];
}

// ---------------------------------------------------------------------------

StencilKernel conv_smoother_kernel(const ModelParams& params, std::size_t level, std::size_t step) {
  const NetArch arch = model_arch(params);
  require(arch.kind == ModelKind::pde_mgnet, "conv_smoother_kernel: model is not pde_mgnet");
  return StencilKernel(1, 1, arch.tap_extent(), params.get(smoother_param_name(level, step)).values);
}

LearnedSmoother::LearnedSmoother(ModelParams params)
    : params_(std::move(params)), arch_(model_arch(params_)) {
  require(params_.all_finite(), "LearnedSmoother: non-finite parameters");
  if (arch_.kind == ModelKind::pde_mgnet)
    for (std::size_t l = 0; l + 1 < arch_.levels; ++l)
      for (std::size_t i = 0; i < arch_.nu[l]; ++i)
        conv_kernels_.push_back(conv_smoother_kernel(params_, l, i));
}

const std::vector<StencilKernel>& LearnedSmoother::dense_kernels(const StencilKernel& a) const {
  std::vector<double> feats = normalized_stencil_features(a);
  std::lock_guard lock(mutex_);
  for (const auto& [key, ks] : block_cache_)
    if (key == feats) return ks;
  ad::Tape tape;
  TapedModel model(tape, params_);
  const auto gamma = tape.value(model.gamma(a));
  std::vector<StencilKernel> ks;
  std::size_t off = 0;
  for (std::size_t i = 0; i < arch_.layers; ++i) {
    const std::size_t in = 1 + i * arch_.growth;
    const std::size_t len = arch_.growth * in * arch_.kernel_size();
    ks.emplace_back(arch_.growth, in, arch_.tap_extent(),
                    std::vector<double>(gamma.begin() + static_cast<long>(off),
                                        gamma.begin() + static_cast<long>(off + len)));
    off += len;
  }
  block_cache_.emplace_back(std::move(feats), std::move(ks));
  return block_cache_.back().second;
}

namespace {

SubspaceBasis expand(const std::vector<StencilKernel>& ks, const GridField& r) {
  GridField x = r;
  for (const auto& k : ks) {
    const GridField y = conv(k, x);
    std::vector<double> cat = x.values();
    cat.insert(cat.end(), y.values().begin(), y.values().end());
    x = GridField(x.channels() + y.channels(), r.extent(), std::move(cat));
  }
  SubspaceBasis g;
  for (std::size_t c = 0; c < x.channels(); ++c) g.vectors.push_back(x.channel(c));
  return g;
}

}  // namespace

GridField LearnedSmoother::apply(const LevelOperator& a, const GridField& r, std::size_t step) const {
  require(r.channels() == 1, "LearnedSmoother: single-channel residual expected");
  switch (arch_.kind) {
    case ModelKind::pde_mgnet: {
      std::size_t idx = 0;
      for (std::size_t l = 0; l < a.level; ++l) idx += arch_.nu.at(l);
      require(a.level + 1 < arch_.levels && step < arch_.nu[a.level],
              "LearnedSmoother: no kernel for this level/step");
      return conv(conv_kernels_[idx + step], r);
    }
    case ModelKind::meta_sc: {
      if (all_zero(r.data())) return GridField::zeros_like(r);
      return sc_apply(a, expand(dense_kernels(a.stencil), r), r);
    }
    case ModelKind::meta_direct:
      return meta_direct_smoother(a, r, params_).second;
  }
  return {};
}

GridField pde_mgnet_forward(const GridField& f, const ModelParams& params, const Hierarchy& h,
                            const MgConfig& config) {
  const NetArch arch = model_arch(params);
  require(arch.kind == ModelKind::pde_mgnet, "pde_mgnet_forward: model is not pde_mgnet");
  require(arch.levels == config.levels && arch.dim == h.dim(),
          "pde_mgnet_forward: parameter layout does not match the configuration");
  for (std::size_t l = 0; l + 1 < config.levels; ++l)
    require(arch.nu.at(l) == config.nu.at(l), "pde_mgnet_forward: smoothing counts differ from the model");
  return mg_cycle(f, h, LearnedSmoother(params), config);
}

SubspaceBasis meta_nn_sc(const GridField& r, const StencilKernel& a, const ModelParams& theta) {
  require(r.channels() == 1, "meta_nn_sc: single-channel residual expected");
  ad::Tape tape;
  TapedModel model(tape, theta);
  require(model.arch().kind == ModelKind::meta_sc, "meta_nn_sc: model is not meta_sc");
  const ad::Var x = tape.constant(r.values());
  const auto out = tape.value(model.dense_block(model.gamma(a), x, r.extent()));
  SubspaceBasis g;
  const std::size_t n = r.size();
  for (std::size_t c = 0; c < model.arch().subspace_columns(); ++c)
    g.vectors.emplace_back(1, r.extent(),
                           std::vector<double>(out.begin() + static_cast<long>(c * n),
                                               out.begin() + static_cast<long>((c + 1) * n)));
  for (const auto& v : g.vectors)
    if (!v.all_finite()) throw NonFiniteError("meta_nn_sc: non-finite subspace");
  return g;
}

GridField meta_sc_smoother(const LevelOperator& a, const GridField& r, const ModelParams& theta) {
  if (all_zero(r.data())) return GridField::zeros_like(r);
  return sc_apply(a, meta_nn_sc(r, a.stencil, theta), r);
}

std::pair<StencilKernel, GridField> meta_direct_smoother(const LevelOperator& a, const GridField& r,
                                                         const ModelParams& params) {
  require(r.channels() == 1, "meta_direct_smoother: single-channel residual expected");
  ad::Tape tape;
  TapedModel model(tape, params);
  const ad::Var x = tape.constant(r.values());
  const auto kv = tape.value(model.direct_kernel(a.stencil, x, r.extent()));
  StencilKernel k(1, 1, model.arch().tap_extent(), std::vector<double>(kv.begin(), kv.end()));
  GridField e = conv(k, r);
  return {std::move(k), std::move(e)};
}

SolveResult meta_mgnet_iterate(const Hierarchy& h, const GridField& f, const ModelParams& theta,
                               const MgConfig& config, const IterateObserver& observer) {
  const LearnedSmoother smoother(theta);
  require(smoother.arch().dim == h.dim(), "meta_mgnet_iterate: model dimension differs from the problem");
  return solve(h, f, smoother, config, observer);
}

}  // namespace metamg
