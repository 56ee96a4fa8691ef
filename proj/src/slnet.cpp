#include "stormbg/slnet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "stormbg/parallel.hpp"

namespace stormbg {

namespace {

using Index = std::ptrdiff_t;

struct Span2D {
  Index y0, y1, x0, x1;
};

// Output rows/cols for which the input tap (y + dy, x + dx) is in bounds.
Span2D valid_span(Index h, Index w, Index dy, Index dx) {
  return {std::max<Index>(0, -dy), std::min<Index>(h, h - dy), std::max<Index>(0, -dx), std::min<Index>(w, w - dx)};
}

void conv_forward(const ConvLayer& layer, const double* in, Index h, Index w, double* out) {
  const Index plane = h * w;
  const Index ry = static_cast<Index>(layer.kernel_h / 2);
  const Index rx = static_cast<Index>(layer.kernel_w / 2);
  for (std::size_t o = 0; o < layer.out_channels; ++o) {
    double* out_o = out + static_cast<Index>(o) * plane;
    std::fill(out_o, out_o + plane, layer.bias[o]);
    for (std::size_t i = 0; i < layer.in_channels; ++i) {
      const double* in_i = in + static_cast<Index>(i) * plane;
      for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
          const double wt = layer.weight(o, i, ky, kx);
          if (wt == 0.0) continue;
          const Index dy = static_cast<Index>(ky) - ry;
          const Index dx = static_cast<Index>(kx) - rx;
          const Span2D s = valid_span(h, w, dy, dx);
          for (Index y = s.y0; y < s.y1; ++y) {
            double* dst = out_o + y * w;
            const double* src = in_i + (y + dy) * w + dx;
            for (Index x = s.x0; x < s.x1; ++x) dst[x] += wt * src[x];
          }
        }
      }
    }
  }
}

// Accumulates dL/dW and dL/db from the output gradient; when grad_in is
// non-null also accumulates dL/d(input).
void conv_backward(const ConvLayer& layer, const double* in, const double* grad_out, Index h, Index w,
                   double* grad_w, double* grad_b, double* grad_in) {
  const Index plane = h * w;
  const Index ry = static_cast<Index>(layer.kernel_h / 2);
  const Index rx = static_cast<Index>(layer.kernel_w / 2);
  using ConstRow = Eigen::Map<const Eigen::VectorXd>;
  for (std::size_t o = 0; o < layer.out_channels; ++o) {
    const double* g_o = grad_out + static_cast<Index>(o) * plane;
    grad_b[o] += ConstRow(g_o, plane).sum();
    for (std::size_t i = 0; i < layer.in_channels; ++i) {
      const double* in_i = in + static_cast<Index>(i) * plane;
      double* gin_i = grad_in ? grad_in + static_cast<Index>(i) * plane : nullptr;
      for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
          const Index dy = static_cast<Index>(ky) - ry;
          const Index dx = static_cast<Index>(kx) - rx;
          const Span2D s = valid_span(h, w, dy, dx);
          const Index len = s.x1 - s.x0;
          if (len <= 0) continue;
          double acc = 0.0;
          for (Index y = s.y0; y < s.y1; ++y) {
            acc += ConstRow(g_o + y * w + s.x0, len).dot(ConstRow(in_i + (y + dy) * w + dx + s.x0, len));
          }
          grad_w[((o * layer.in_channels + i) * layer.kernel_h + ky) * layer.kernel_w + kx] += acc;
          if (gin_i) {
            const double wt = layer.weight(o, i, ky, kx);
            for (Index y = s.y0; y < s.y1; ++y) {
              double* dst = gin_i + (y + dy) * w + dx;
              const double* src = g_o + y * w;
              for (Index x = s.x0; x < s.x1; ++x) dst[x] += wt * src[x];
            }
          }
        }
      }
    }
  }
}

void check_window(const SLNetModel& model, const FlatMatrix& window) {
  if (window.frames() != model.frames())
    throw std::invalid_argument("slnet: window has " + std::to_string(window.frames()) + " frames, model expects " +
                                std::to_string(model.frames()));
  if (static_cast<std::size_t>(window.data.cols()) != window.height * window.width || window.data.cols() == 0)
    throw std::invalid_argument("slnet: window shape record does not match its data");
}

// Gamma_mu; the identity when mu == 0.
Matrix shrink(const Matrix& X, double mu, ThinSVD* svd) {
  if (mu == 0.0) return X;
  ThinSVD local;
  return svt(X, mu, svd ? *svd : local);
}

// Restricts a gradient to the tangent space of the retained singular subspaces.
Matrix project_gradient(const Matrix& G, const ThinSVD& svd, double mu) {
  Eigen::Index r = 0;
  while (r < svd.sigma.size() && svd.sigma(r) > mu) ++r;
  if (r == 0) return G;  // nothing survives the shrinkage: pass the gradient straight through
  const Matrix Ur = svd.U.leftCols(r);
  const Matrix Vr = svd.Vt.topRows(r);
  const Matrix UtG = Ur.transpose() * G;
  const Matrix GV = G * Vr.transpose();
  const Matrix core = UtG * Vr.transpose();
  return Ur * UtG + GV * Vr - Ur * core * Vr;
}

std::vector<double> flatten_params(const SLNetModel& m) {
  std::vector<double> p;
  p.reserve(m.parameter_count());
  p.insert(p.end(), m.layer1.weights.begin(), m.layer1.weights.end());
  p.insert(p.end(), m.layer1.bias.begin(), m.layer1.bias.end());
  p.insert(p.end(), m.layer2.weights.begin(), m.layer2.weights.end());
  p.insert(p.end(), m.layer2.bias.begin(), m.layer2.bias.end());
  return p;
}

std::vector<double> flatten_grads(const Gradients& g) {
  std::vector<double> p;
  p.reserve(g.w1.size() + g.b1.size() + g.w2.size() + g.b2.size());
  p.insert(p.end(), g.w1.begin(), g.w1.end());
  p.insert(p.end(), g.b1.begin(), g.b1.end());
  p.insert(p.end(), g.w2.begin(), g.w2.end());
  p.insert(p.end(), g.b2.begin(), g.b2.end());
  return p;
}

void unflatten_params(const std::vector<double>& p, SLNetModel& m) {
  auto it = p.begin();
  for (auto* v : {&m.layer1.weights, &m.layer1.bias, &m.layer2.weights, &m.layer2.bias}) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(v->size()), v->begin());
    it += static_cast<std::ptrdiff_t>(v->size());
  }
}

class Adam {
 public:
  explicit Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace

ConvLayer::ConvLayer(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw)
    : out_channels(out), in_channels(in), kernel_h(kh), kernel_w(kw), weights(out * in * kh * kw, 0.0),
      bias(out, 0.0) {}

void ConvLayer::validate() const {
  if (out_channels == 0 || in_channels == 0 || kernel_h == 0 || kernel_w == 0)
    throw std::invalid_argument("conv layer: zero-sized dimension");
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) throw std::invalid_argument("conv layer: kernel dims must be odd");
  if (weights.size() != out_channels * in_channels * kernel_h * kernel_w || bias.size() != out_channels)
    throw std::invalid_argument("conv layer: parameter count does not match shape");
  for (double v : weights)
    if (!std::isfinite(v)) throw NumericalError("conv layer: non-finite weight");
  for (double v : bias)
    if (!std::isfinite(v)) throw NumericalError("conv layer: non-finite bias");
}

std::size_t SLNetModel::parameter_count() const {
  return layer1.weights.size() + layer1.bias.size() + layer2.weights.size() + layer2.bias.size();
}

void SLNetModel::validate() const {
  layer1.validate();
  layer2.validate();
  if (layer1.in_channels != layer2.out_channels || layer1.out_channels != layer2.in_channels)
    throw std::invalid_argument("slnet model: layer channel counts are inconsistent");
}

void Hyperparams::validate() const {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw std::invalid_argument("mu must be a finite value >= 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be a finite value >= 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (triplet_offset == 0) throw std::invalid_argument("triplet offset must be positive");
  if (hidden_channels == 0) throw std::invalid_argument("hidden channels must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) throw std::invalid_argument("kernel size must be odd and positive");
}

std::uint64_t Hyperparams::hash() const {
  std::ostringstream os;
  os.precision(17);
  os << mu << '|' << alpha << '|' << epochs << '|' << learning_rate << '|' << triplet_offset << '|'
     << hidden_channels << '|' << kernel_size << '|' << seed << '|' << to_string(normalization) << '|'
     << static_cast<int>(shrink_gradient);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ConvLayer kaiming_init(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw, std::uint64_t seed) {
  ConvLayer layer(out, in, kh, kw);
  if (layer.fan_in() == 0) throw std::invalid_argument("kaiming_init: fan_in is zero");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(layer.fan_in())));
  for (double& v : layer.weights) v = dist(rng);
  return layer;
}

SLNetModel init_model(std::size_t frames, std::size_t hidden, std::size_t kernel, std::uint64_t seed) {
  std::seed_seq seq1{seed, std::uint64_t{1}};
  std::seed_seq seq2{seed, std::uint64_t{2}};
  std::uint64_t s1 = 0, s2 = 0;
  {
    std::uint32_t out[2];
    seq1.generate(out, out + 2);
    s1 = (std::uint64_t{out[0]} << 32) | out[1];
    seq2.generate(out, out + 2);
    s2 = (std::uint64_t{out[0]} << 32) | out[1];
  }
  SLNetModel model;
  model.layer1 = kaiming_init(hidden, frames, kernel, kernel, s1);
  model.layer2 = kaiming_init(frames, hidden, kernel, kernel, s2);
  return model;
}

FlatMatrix forward(const SLNetModel& model, const FlatMatrix& window, ForwardCache& cache) {
  check_window(model, window);
  const Index h = static_cast<Index>(window.height);
  const Index w = static_cast<Index>(window.width);
  const std::size_t plane = window.height * window.width;
  cache.pre_activation.assign(model.hidden() * plane, 0.0);
  conv_forward(model.layer1, window.data.data(), h, w, cache.pre_activation.data());
  cache.hidden.resize(cache.pre_activation.size());
  std::transform(cache.pre_activation.begin(), cache.pre_activation.end(), cache.hidden.begin(),
                 [](double v) { return v > 0.0 ? v : 0.0; });
  FlatMatrix out{Matrix(window.data.rows(), window.data.cols()), window.height, window.width};
  conv_forward(model.layer2, cache.hidden.data(), h, w, out.data.data());
  return out;
}

FlatMatrix forward(const SLNetModel& model, const FlatMatrix& window) {
  ForwardCache cache;
  return forward(model, window, cache);
}

LossTerms loss_from_shrunk(const Matrix& M, const Matrix& L_tilde, double alpha) {
  if (M.rows() != L_tilde.rows() || M.cols() != L_tilde.cols()) throw std::invalid_argument("loss: shape mismatch");
  if (M.size() == 0) throw std::invalid_argument("loss: empty input");
  double abs_sum = 0.0, pos_sum = 0.0, neg_sum = 0.0;
  const double* m = M.data();
  const double* l = L_tilde.data();
  for (Index i = 0; i < M.size(); ++i) {
    const double d = m[i] - l[i];
    abs_sum += std::abs(d);
    if (d > 0.0) pos_sum += d;
    else neg_sum -= d;
  }
  const double n = static_cast<double>(M.size());
  LossTerms t;
  t.data = abs_sum / n;
  t.sparse = alpha * (pos_sum / n);
  t.residual = neg_sum / n;
  t.total = t.data + t.sparse + t.residual;
  return t;
}

LossTerms loss(const FlatMatrix& M, const FlatMatrix& L_hat, double mu, double alpha) {
  if (!(mu >= 0.0) || !(alpha >= 0.0)) throw std::invalid_argument("loss: mu and alpha must be >= 0");
  if (M.data.rows() != L_hat.data.rows() || M.data.cols() != L_hat.data.cols())
    throw std::invalid_argument("loss: shape mismatch");
  return loss_from_shrunk(M.data, shrink(L_hat.data, mu, nullptr), alpha);
}

Matrix loss_gradient(const Matrix& M, const Matrix& L_tilde, double alpha) {
  if (M.rows() != L_tilde.rows() || M.cols() != L_tilde.cols()) throw std::invalid_argument("loss: shape mismatch");
  const double n = static_cast<double>(M.size());
  const double above = -(1.0 + alpha) / n;  // M > Lt
  const double below = 2.0 / n;             // M < Lt
  Matrix g(M.rows(), M.cols());
  const double* m = M.data();
  const double* l = L_tilde.data();
  double* out = g.data();
  for (Index i = 0; i < M.size(); ++i) {
    const double d = m[i] - l[i];
    out[i] = d > 0.0 ? above : (d < 0.0 ? below : 0.0);
  }
  return g;
}

Gradients backprop(const SLNetModel& model, const FlatMatrix& window, const ForwardCache& cache,
                   const Matrix& upstream) {
  check_window(model, window);
  if (upstream.rows() != window.data.rows() || upstream.cols() != window.data.cols())
    throw std::invalid_argument("backprop: upstream gradient shape mismatch");
  const Index h = static_cast<Index>(window.height);
  const Index w = static_cast<Index>(window.width);
  Gradients g;
  g.w1.assign(model.layer1.weights.size(), 0.0);
  g.b1.assign(model.layer1.bias.size(), 0.0);
  g.w2.assign(model.layer2.weights.size(), 0.0);
  g.b2.assign(model.layer2.bias.size(), 0.0);

  std::vector<double> grad_hidden(cache.hidden.size(), 0.0);
  conv_backward(model.layer2, cache.hidden.data(), upstream.data(), h, w, g.w2.data(), g.b2.data(),
                grad_hidden.data());
  for (std::size_t i = 0; i < grad_hidden.size(); ++i)
    if (!(cache.pre_activation[i] > 0.0)) grad_hidden[i] = 0.0;
  conv_backward(model.layer1, window.data.data(), grad_hidden.data(), h, w, g.w1.data(), g.b1.data(), nullptr);
  return g;
}

Gradients backward(const SLNetModel& model, const FlatMatrix& window, const Hyperparams& hp, LossTerms* terms) {
  ForwardCache cache;
  const FlatMatrix out = forward(model, window, cache);
  ThinSVD svd;
  const Matrix shrunk = shrink(out.data, hp.mu, &svd);
  if (terms) *terms = loss_from_shrunk(window.data, shrunk, hp.alpha);
  Matrix upstream = loss_gradient(window.data, shrunk, hp.alpha);
  if (hp.shrink_gradient == ShrinkGradient::Subspace && hp.mu > 0.0) upstream = project_gradient(upstream, svd, hp.mu);
  return backprop(model, window, cache, upstream);
}

std::pair<SLNetModel, TrainReport> train(const ImageStack& stack, const Hyperparams& hp) {
  hp.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t delta = hp.triplet_offset;
  const std::size_t n = stack.frames();
  if (n < 2 * delta + 1)
    throw DataError("training needs at least " + std::to_string(2 * delta + 1) + " frames for triplet offset " +
                    std::to_string(delta) + ", got " + std::to_string(n));
  stack.validate();

  const NormalizationRecord rec = normalization_for(stack, hp.normalization);
  const ImageStack data = apply_normalization(stack, rec);

  SLNetModel model = init_model(3, hp.hidden_channels, hp.kernel_size, hp.seed);
  model.hyperparams_hash = hp.hash();
  model.input_scale = rec.scale;

  std::vector<std::size_t> anchors(n - 2 * delta);
  for (std::size_t t = 0; t < anchors.size(); ++t) anchors[t] = t;

  std::seed_seq shuffle_seq{hp.seed, std::uint64_t{0x7269706c6574}};
  std::mt19937_64 rng(shuffle_seq);
  std::vector<double> params = flatten_params(model);
  Adam adam(params.size(), hp.learning_rate);

  TrainReport report;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(anchors.begin(), anchors.end(), rng);
    EpochRecord sums;
    for (std::size_t t : anchors) {
      const std::size_t idx[3] = {t, t + delta, t + 2 * delta};
      const FlatMatrix window = flatten(data, idx);
      LossTerms terms;
      const Gradients grads = backward(model, window, hp, &terms);
      if (!std::isfinite(terms.total))
        throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", triplet " +
                             std::to_string(t));
      adam.step(params, flatten_grads(grads));
      unflatten_params(params, model);
      sums.total += terms.total;
      sums.data += terms.data;
      sums.sparse += terms.sparse;
      sums.residual += terms.residual;
    }
    const double count = static_cast<double>(anchors.size());
    report.epochs.push_back({sums.total / count, sums.data / count, sums.sparse / count, sums.residual / count});
    report.epochs_completed = epoch + 1;
  }
  for (double p : params)
    if (!std::isfinite(p)) throw NumericalError("training diverged: non-finite parameter");
  model.epochs_trained = static_cast<std::uint32_t>(hp.epochs);

  std::vector<bool> alive(model.hidden(), false);
  for (std::size_t t : anchors) {
    const std::size_t idx[3] = {t, t + delta, t + 2 * delta};
    ForwardCache cache;
    forward(model, flatten(data, idx), cache);
    const std::size_t pixels = cache.hidden.size() / model.hidden();
    for (std::size_t c = 0; c < model.hidden(); ++c)
      if (!alive[c]) alive[c] = std::any_of(cache.hidden.begin() + static_cast<std::ptrdiff_t>(c * pixels),
                                            cache.hidden.begin() + static_cast<std::ptrdiff_t>((c + 1) * pixels),
                                            [](double v) { return v > 0.0; });
  }
  report.dead_channels = static_cast<std::size_t>(std::count(alive.begin(), alive.end(), false));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(model), std::move(report)};
}

DecompositionResult decompose(const SLNetModel& model, const ImageStack& stack, const Hyperparams& hp,
                              unsigned threads) {
  hp.validate();
  model.validate();
  if (model.frames() != 3) throw std::invalid_argument("decompose: model must take 3-frame windows");
  const std::vector<WindowSlot> plan = triplet_plan(stack.frames(), hp.triplet_offset);
  stack.validate();

  NormalizationRecord rec;
  if (model.input_scale > 0.0) {
    rec.method = NormalizationMethod::MaxScale;
    rec.scale = model.input_scale;
  } else {
    rec = normalization_for(stack, hp.normalization);
  }
  const ImageStack data = apply_normalization(stack, rec);

  // group target frames by the window that serves them (keyed by first frame)
  std::vector<std::vector<std::size_t>> served(stack.frames());
  for (std::size_t j = 0; j < plan.size(); ++j) served[plan[j].frames[0]].push_back(j);
  std::vector<std::size_t> windows;
  for (std::size_t a = 0; a < served.size(); ++a)
    if (!served[a].empty()) windows.push_back(a);

  DecompositionResult result{ImageStack(stack.frames(), stack.height(), stack.width()),
                             ImageStack(stack.frames(), stack.height(), stack.width())};
  result.low_rank.pixel_size_nm = result.sparse.pixel_size_nm = stack.pixel_size_nm;

  parallel_for(windows.size(), threads, [&](std::size_t wi) {
    const auto& targets = served[windows[wi]];
    const auto& frames = plan[targets.front()].frames;
    const FlatMatrix window = flatten(data, frames);
    FlatMatrix out = forward(model, window);
    if (hp.shrink_at_inference) out.data = shrink(out.data, hp.mu, nullptr);
    for (std::size_t j : targets) {
      const auto row = out.data.row(static_cast<Eigen::Index>(plan[j].slot));
      auto low = result.low_rank.frame(j);
      auto sparse = result.sparse.frame(j);
      const auto raw = stack.frame(j);
      for (std::size_t p = 0; p < low.size(); ++p) {
        const double l = std::max(row(static_cast<Eigen::Index>(p)), 0.0) * rec.scale;
        low[p] = static_cast<float>(l);
        sparse[p] = std::max(raw[p] - low[p], 0.0f);
      }
    }
  });
  return result;
}

}  // namespace stormbg
