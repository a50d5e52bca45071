#include "incfsl/model.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "incfsl/rng.hpp"

namespace incfsl {

namespace {
constexpr double kNormEps = 1e-12;

std::string layer_weight(int i) { return "layer" + std::to_string(i) + ".weight"; }
std::string layer_bias(int i) { return "layer" + std::to_string(i) + ".bias"; }

std::vector<std::pair<int, int>> layer_dims(const ModelConfig& c) {
  std::vector<std::pair<int, int>> dims;
  int in = c.input_dim;
  for (int h : c.hidden) {
    dims.emplace_back(in, h);
    in = h;
  }
  if (!c.identity()) dims.emplace_back(in, c.feature_dim);
  return dims;
}
}  // namespace

bool ModelState::all_finite() const {
  if (!std::isfinite(scale_gamma)) return false;
  for (const auto& [name, m] : theta)
    if (!m.allFinite()) return false;
  return true;
}

ModelState init_model(const ModelConfig& config, uint64_t seed) {
  if (config.input_dim < 1) throw ConfigError("ModelConfig: input_dim must be >= 1");
  if (!config.identity() && config.feature_dim < 1)
    throw ConfigError("ModelConfig: feature_dim must be >= 1");
  if (config.gamma_init <= 0.0) throw ConfigError("ModelConfig: gamma_init must be positive");

  ModelState state;
  state.config = config;
  state.scale_gamma = config.gamma_init;

  CounterRng rng(seed, 0, Draw::ParamInit);
  const auto dims = layer_dims(config);
  for (size_t l = 0; l < dims.size(); ++l) {
    const auto [in, out] = dims[l];
    Mat w(in, out);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < in; ++i)
      for (int j = 0; j < out; ++j) w(i, j) = scale * rng.next_gaussian();
    state.theta[layer_weight(static_cast<int>(l))] = std::move(w);
    state.theta[layer_bias(static_cast<int>(l))] = Mat::Zero(1, out);
  }
  return state;
}

Mat extract_features(const ModelState& state, const Mat& inputs) {
  if (inputs.rows() == 0) return Mat(0, state.d());
  if (inputs.cols() != state.config.input_dim)
    throw ShapeError("extract_features: input dimension mismatch");
  if (state.config.identity()) return inputs;

  Mat x = inputs;
  const int n_layers = state.config.n_layers();
  for (int l = 0; l < n_layers; ++l) {
    const Mat& w = state.theta.at(layer_weight(l));
    const Mat& b = state.theta.at(layer_bias(l));
    x = (x * w).rowwise() + b.row(0);
    if (l + 1 < n_layers) x = x.array().tanh();
  }
  return x;
}

Mat cosine_logits(const Mat& features, const Mat& weights, double gamma, double eps) {
  if (features.cols() != weights.rows())
    throw ShapeError("cosine_logits: feature dim does not match weight rows");
  Mat fn = features;
  for (Eigen::Index i = 0; i < fn.rows(); ++i) fn.row(i) /= std::max(fn.row(i).norm(), eps);
  Mat wn = weights;
  for (Eigen::Index j = 0; j < wn.cols(); ++j) wn.col(j) /= std::max(wn.col(j).norm(), eps);
  return gamma * (fn * wn);
}

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

PredictionMatrix cosine_classify(const Mat& features, const Mat& weights, double gamma) {
  if (weights.cols() == 0) throw ShapeError("cosine_classify: no weight columns");
  PredictionMatrix p;
  p.probs = softmax_rows(cosine_logits(features, weights, gamma, kNormEps));
  return p;
}

PredictionMatrix cosine_classify(const Mat& features, const ClassifierWeights& weights,
                                 double gamma) {
  return cosine_classify(features, weights.joint(), gamma);
}

Mat support_membership(const std::vector<int>& support_labels, int n_base, int n_way,
                       bool normalized) {
  Mat h = Mat::Zero(static_cast<Eigen::Index>(support_labels.size()), n_way);
  std::vector<int> counts(static_cast<size_t>(n_way), 0);
  for (size_t k = 0; k < support_labels.size(); ++k) {
    const int j = support_labels[k] - n_base - 1;
    if (j < 0 || j >= n_way)
      throw ShapeError("support_membership: label " + std::to_string(support_labels[k]) +
                       " outside episode range");
    h(static_cast<Eigen::Index>(k), j) = 1.0;
    ++counts[static_cast<size_t>(j)];
  }
  for (int j = 0; j < n_way; ++j) {
    if (counts[static_cast<size_t>(j)] == 0)
      throw ShapeError("support class " + std::to_string(n_base + 1 + j) +
                       " has no support examples");
    if (normalized) h.col(j) /= static_cast<double>(counts[static_cast<size_t>(j)]);
  }
  return h;
}

Mat compute_prototypes(const Mat& support_features, const std::vector<int>& support_labels,
                       int n_base, int n_way) {
  if (support_features.rows() != static_cast<Eigen::Index>(support_labels.size()))
    throw ShapeError("compute_prototypes: feature/label count mismatch");
  const Mat h = support_membership(support_labels, n_base, n_way, /*normalized=*/true);
  return support_features.transpose() * h;  // d x N
}

// ---------------------------------------------------------------------------
// Tape bridge
// ---------------------------------------------------------------------------

ModelParams register_model_params(ad::Tape& tape, const ModelState& state) {
  ModelParams p;
  for (const auto& [name, m] : state.theta) p.theta[name] = tape.param(m);
  p.gamma = tape.scalar_param(state.scale_gamma);
  return p;
}

ad::Value forward_features(ad::Tape& tape, const ModelParams& params, const ModelConfig& config,
                           const Mat& inputs) {
  if (inputs.cols() != config.input_dim)
    throw ShapeError("forward_features: input dimension mismatch");
  ad::Value x = tape.constant(inputs);
  if (config.identity()) return x;
  const int n_layers = config.n_layers();
  for (int l = 0; l < n_layers; ++l) {
    x = tape.matmul(x, params.theta.at(layer_weight(l)));
    x = tape.add_rowvec(x, params.theta.at(layer_bias(l)));
    if (l + 1 < n_layers) x = tape.tanh(x);
  }
  return x;
}

ad::Value cosine_logits_ad(ad::Tape& tape, ad::Value features, ad::Value weights,
                           ad::Value gamma) {
  ad::Value fn = tape.l2_normalize_rows(features, kNormEps);
  ad::Value wn = tape.transpose(tape.l2_normalize_rows(tape.transpose(weights), kNormEps));
  return tape.scale_by(tape.matmul(fn, wn), gamma);
}

ad::Value prototypes_ad(ad::Tape& tape, ad::Value support_features,
                        const std::vector<int>& support_labels, int n_base, int n_way) {
  const Mat h = support_membership(support_labels, n_base, n_way, /*normalized=*/true);
  return tape.matmul(tape.transpose(support_features), tape.constant(h));
}

ad::Value nll_from_probs_ad(ad::Tape& tape, ad::Value probs, const std::vector<int>& label_cols,
                            double eps) {
  ad::Value picked = tape.gather_per_row(probs, label_cols);
  return tape.scalar_mul(tape.mean_all(tape.log_clamped(picked, eps)), -1.0);
}

// ---------------------------------------------------------------------------
// Checkpoint container (binary; layout documented in docs/FORMATS.md)
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'I', 'F', 'S', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_mat(std::ostream& os, const Mat& m) {
  put_u64(os, static_cast<uint64_t>(m.rows()));
  put_u64(os, static_cast<uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(os, m(i, j));
}

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
double get_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
std::string get_str(std::istream& is) {
  const uint64_t n = get_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
Mat get_mat(std::istream& is) {
  const uint64_t r = get_u64(is);
  const uint64_t c = get_u64(is);
  Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_f64(is);
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state, const Mat& w_base,
                     const std::string& config_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kCkptMagic, 8);
  put_u32(os, kCkptVersion);
  put_str(os, config_hash);
  put_u32(os, static_cast<uint32_t>(state.config.input_dim));
  put_u32(os, static_cast<uint32_t>(state.config.feature_dim));
  put_u32(os, static_cast<uint32_t>(state.config.hidden.size()));
  for (int h : state.config.hidden) put_u32(os, static_cast<uint32_t>(h));
  put_f64(os, state.config.gamma_init);
  put_f64(os, state.scale_gamma);
  put_u64(os, state.theta.size());
  for (const auto& [name, m] : state.theta) {
    put_str(os, name);
    put_mat(os, m);
  }
  put_mat(os, w_base);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(is);
  if (version != kCkptVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ck;
  ck.config_hash = get_str(is);
  ck.state.config.input_dim = static_cast<int>(get_u32(is));
  ck.state.config.feature_dim = static_cast<int>(get_u32(is));
  const uint32_t n_hidden = get_u32(is);
  ck.state.config.hidden.resize(n_hidden);
  for (uint32_t i = 0; i < n_hidden; ++i) ck.state.config.hidden[i] = static_cast<int>(get_u32(is));
  ck.state.config.gamma_init = get_f64(is);
  ck.state.scale_gamma = get_f64(is);
  const uint64_t n_tensors = get_u64(is);
  for (uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = get_str(is);
    ck.state.theta[name] = get_mat(is);
  }
  ck.w_base = get_mat(is);
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return ck;
}

}  // namespace incfsl
