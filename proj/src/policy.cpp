#include "sdft/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>

#include "sdft/errors.hpp"
#include "transformer.hpp"

namespace sdft {

// ---------------------------------------------------------------- vocab / rng

void Vocab::validate() const {
  if (size < 4) throw ConfigError("vocab.size must be >= 4, got " + std::to_string(size));
  const std::set<TokenId> specials{bos, eos, pad, sep};
  if (specials.size() != 4) throw ConfigError("vocab special tokens (bos, eos, pad, sep) must be distinct");
  for (TokenId t : specials)
    if (!contains(t)) throw ConfigError("vocab special token " + std::to_string(t) + " out of range");
}

void check_tokens(const Vocab& vocab, std::span<const TokenId> tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!vocab.contains(tokens[i]))
      throw InputError("token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                       " outside vocabulary of size " + std::to_string(vocab.size));
}

TokenSeq concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  TokenSeq out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(root);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw InputError("Rng::below(0)");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do r = engine_();
  while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

double Rng::normal() {
  // Box-Muller; one draw per call keeps the stream position simple to reason about.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// ---------------------------------------------------------------- params

std::string to_string(Family f) { return f == Family::tabular ? "tabular" : "transformer"; }

Family PolicyParams::family() const {
  return std::holds_alternative<TabularShape>(shape) ? Family::tabular : Family::transformer;
}

namespace {

std::size_t tabular_rows(const Vocab& vocab, const TabularShape& s) {
  std::size_t rows = 1;
  for (int i = 0; i < s.window; ++i) rows *= static_cast<std::size_t>(vocab.size);
  return rows;
}

void check_tabular_shape(const Vocab& vocab, const TabularShape& s) {
  if (s.window < 1) throw ConfigError("tabular window must be >= 1");
  double rows = std::pow(static_cast<double>(vocab.size), s.window);
  if (rows * vocab.size > 5e7) throw ConfigError("tabular table too large for window " + std::to_string(s.window));
}

// Row of the logits table for the context ending at `end` (exclusive).
std::size_t tabular_row(const Vocab& vocab, const TabularShape& s, std::span<const TokenId> seq, std::size_t end) {
  std::size_t row = 0, mult = 1;
  for (int k = 0; k < s.window; ++k) {
    const TokenId t = (end >= static_cast<std::size_t>(k) + 1) ? seq[end - 1 - k] : vocab.pad;
    row += static_cast<std::size_t>(t) * mult;
    mult *= static_cast<std::size_t>(vocab.size);
  }
  return row;
}

}  // namespace

std::size_t parameter_count(const Vocab& vocab, const Shape& shape) {
  vocab.validate();
  if (const auto* tab = std::get_if<TabularShape>(&shape)) {
    check_tabular_shape(vocab, *tab);
    return tabular_rows(vocab, *tab) * static_cast<std::size_t>(vocab.size);
  }
  return detail::TransformerLayout::make(vocab.size, std::get<TransformerShape>(shape)).total;
}

PolicyParams init_policy(const Vocab& vocab, const Shape& shape, std::uint64_t seed) {
  PolicyParams p{vocab, shape, std::vector<double>(parameter_count(vocab, shape), 0.0)};
  Rng rng(derive_seed(seed, {0x1417}));
  if (p.family() == Family::tabular) {
    for (double& v : p.theta) v = -0.05 + 0.1 * rng.uniform();
    return p;
  }
  const auto l = detail::TransformerLayout::make(vocab.size, std::get<TransformerShape>(shape));
  const std::size_t d = static_cast<std::size_t>(l.dim), h = static_cast<std::size_t>(l.hidden);
  auto fill = [&](std::size_t off, std::size_t n, double stddev) {
    for (std::size_t i = 0; i < n; ++i) p.theta[off + i] = stddev * rng.normal();
  };
  auto ones = [&](std::size_t off, std::size_t n) { std::fill_n(p.theta.begin() + off, n, 1.0); };
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  fill(l.tok_emb, static_cast<std::size_t>(l.vocab) * d, sd);
  fill(l.pos_emb, static_cast<std::size_t>(l.context) * d, sd);
  for (const auto& b : l.blocks) {
    ones(b.ln1_g, d);
    fill(b.wq, d * d, sd);
    fill(b.wk, d * d, sd);
    fill(b.wv, d * d, sd);
    fill(b.wo, d * d, sd);
    ones(b.ln2_g, d);
    fill(b.w1, d * h, sd);
    fill(b.w2, h * d, 1.0 / std::sqrt(static_cast<double>(h)));
  }
  ones(l.lnf_g, d);
  fill(l.w_out, d * static_cast<std::size_t>(l.vocab), sd);
  return p;
}

void validate(const PolicyParams& params) {
  const std::size_t expected = parameter_count(params.vocab, params.shape);
  if (params.theta.size() != expected)
    throw ConfigError("theta has " + std::to_string(params.theta.size()) + " entries, layout requires " +
                      std::to_string(expected));
  for (double v : params.theta)
    if (!std::isfinite(v)) throw ConfigError("theta contains a non-finite entry");
}

GradientVector& GradientVector::operator+=(const GradientVector& other) {
  if (other.size() != size()) throw InputError("gradient length mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
  return *this;
}

GradientVector& GradientVector::operator*=(double s) {
  for (double& v : values) v *= s;
  return *this;
}

double GradientVector::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

bool GradientVector::finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- evaluation

void log_softmax_inplace(std::span<double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  for (double& v : row) v -= lz;
}

struct ResponsePass::Impl {
  std::optional<detail::TransformerForward> forward;
  std::vector<std::size_t> tabular_rows;  // table row per response position
  int offset = 0;                         // first forward row used by the response
};

ResponsePass::ResponsePass(const PolicyParams& params, std::span<const TokenId> prompt,
                           std::span<const TokenId> response)
    : params_(&params), impl_(std::make_unique<Impl>()) {
  if (prompt.empty()) throw InputError("prompt must be non-empty");
  check_tokens(params.vocab, prompt);
  check_tokens(params.vocab, response);
  const int T = static_cast<int>(response.size());
  const int V = params.vocab.size;
  log_probs_ = RowMatrix(T, V);
  if (T == 0) return;
  const TokenSeq seq = concat(prompt, response.first(response.size() - 1));
  if (const auto* tab = std::get_if<TabularShape>(&params.shape)) {
    for (int t = 0; t < T; ++t) {
      const std::size_t r = tabular_row(params.vocab, *tab, seq, prompt.size() + t);
      impl_->tabular_rows.push_back(r);
      auto row = log_probs_.row(t);
      std::copy_n(params.theta.begin() + static_cast<std::ptrdiff_t>(r * V), V, row.begin());
      log_softmax_inplace(row);
    }
    return;
  }
  impl_->forward.emplace(params, seq);
  impl_->offset = static_cast<int>(prompt.size()) - 1;
  const RowMatrix& logits = impl_->forward->logits();
  for (int t = 0; t < T; ++t) {
    auto row = log_probs_.row(t);
    auto src = logits.row(impl_->offset + t);
    std::copy(src.begin(), src.end(), row.begin());
    log_softmax_inplace(row);
  }
}

ResponsePass::~ResponsePass() = default;
ResponsePass::ResponsePass(ResponsePass&&) noexcept = default;
ResponsePass& ResponsePass::operator=(ResponsePass&&) noexcept = default;

void ResponsePass::backward(const RowMatrix& cotangent, std::span<double> grad) const {
  const int T = length();
  const int V = params_->vocab.size;
  if (cotangent.rows != T || cotangent.cols != V) throw InputError("cotangent shape mismatch");
  if (grad.size() != params_->theta.size()) throw InputError("gradient length mismatch");
  if (T == 0) return;
  if (!impl_->forward) {
    for (int t = 0; t < T; ++t) {
      double* g = grad.data() + impl_->tabular_rows[t] * V;
      auto c = cotangent.row(t);
      for (int v = 0; v < V; ++v) g[v] += c[v];
    }
    return;
  }
  RowMatrix full(impl_->forward->length(), V);
  for (int t = 0; t < T; ++t) {
    auto c = cotangent.row(t);
    std::copy(c.begin(), c.end(), full.row(impl_->offset + t).begin());
  }
  impl_->forward->backward(full, grad);
}

std::vector<double> step_log_probs(const PolicyParams& params, std::span<const TokenId> prefix) {
  if (prefix.empty()) throw InputError("prefix must be non-empty");
  check_tokens(params.vocab, prefix);
  const int V = params.vocab.size;
  std::vector<double> row(V);
  if (const auto* tab = std::get_if<TabularShape>(&params.shape)) {
    const std::size_t r = tabular_row(params.vocab, *tab, prefix, prefix.size());
    std::copy_n(params.theta.begin() + static_cast<std::ptrdiff_t>(r * V), V, row.begin());
  } else {
    detail::TransformerForward fwd(params, prefix);
    auto last = fwd.logits().row(fwd.length() - 1);
    std::copy(last.begin(), last.end(), row.begin());
  }
  log_softmax_inplace(row);
  return row;
}

StepDistribution step_distribution(const PolicyParams& params, std::span<const TokenId> prefix) {
  auto lp = step_log_probs(params, prefix);
  for (double& v : lp) v = std::exp(v);
  return {std::move(lp)};
}

ResponseLogProb logprob_response(const PolicyParams& params, std::span<const TokenId> prompt,
                                 std::span<const TokenId> response) {
  if (response.empty()) throw InputError("response must be non-empty");
  ResponsePass pass(params, prompt, response);
  ResponseLogProb out;
  out.per_token.resize(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    out.per_token[t] = pass.log_probs().at(static_cast<int>(t), response[t]);
    out.total += out.per_token[t];
  }
  return out;
}

Trajectory sample_response(const PolicyParams& params, std::span<const TokenId> prompt, int max_len,
                           double temperature, Rng& rng) {
  if (max_len < 1) throw InputError("max_len must be >= 1");
  if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
  Trajectory tr;
  tr.prompt.assign(prompt.begin(), prompt.end());
  tr.temperature = temperature;
  TokenSeq prefix = tr.prompt;
  const int V = params.vocab.size;
  std::vector<double> scaled(V);
  for (int t = 0; t < max_len; ++t) {
    const auto lp = step_log_probs(params, prefix);
    for (int v = 0; v < V; ++v) scaled[v] = lp[v] / temperature;
    log_softmax_inplace(scaled);
    // Inverse-CDF draw; the final bucket absorbs rounding.
    const double u = rng.uniform();
    double acc = 0.0;
    TokenId y = V - 1;
    for (int v = 0; v < V; ++v) {
      acc += std::exp(scaled[v]);
      if (u < acc) {
        y = v;
        break;
      }
    }
    tr.response.push_back(y);
    tr.student_logprobs.push_back(lp[y]);
    tr.sampler_logprobs.push_back(scaled[y]);
    prefix.push_back(y);
    if (y == params.vocab.eos) break;
  }
  return tr;
}

TokenSeq greedy_decode(const PolicyParams& params, std::span<const TokenId> prompt, int max_len) {
  if (max_len < 1) throw InputError("max_len must be >= 1");
  TokenSeq prefix(prompt.begin(), prompt.end());
  TokenSeq out;
  for (int t = 0; t < max_len; ++t) {
    const auto lp = step_log_probs(params, prefix);
    const auto y = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    out.push_back(y);
    prefix.push_back(y);
    if (y == params.vocab.eos) break;
  }
  return out;
}

GradientVector grad_logprob(const PolicyParams& params, std::span<const TokenId> prompt,
                            std::span<const TokenId> response) {
  if (response.empty()) throw InputError("response must be non-empty");
  ResponsePass pass(params, prompt, response);
  const int V = params.vocab.size;
  RowMatrix cot(pass.length(), V);
  for (int t = 0; t < pass.length(); ++t) {
    for (int v = 0; v < V; ++v) cot.at(t, v) = -std::exp(pass.log_probs().at(t, v));
    cot.at(t, response[t]) += 1.0;
  }
  GradientVector g(params.size());
  pass.backward(cot, g.values);
  return g;
}

double mean_nll(const PolicyParams& params, std::span<const TokenId> prompt, std::span<const TokenId> target,
                std::span<double> grad, double scale) {
  if (target.empty()) throw InputError("target must be non-empty");
  const ResponsePass pass(params, prompt, target);
  const int T = pass.length(), V = params.vocab.size;
  double nll = 0.0;
  for (int t = 0; t < T; ++t) nll -= pass.log_probs().at(t, target[t]);
  if (!grad.empty()) {
    RowMatrix cot(T, V);
    const double w = scale / T;
    for (int t = 0; t < T; ++t) {
      for (int v = 0; v < V; ++v) cot.at(t, v) = w * std::exp(pass.log_probs().at(t, v));
      cot.at(t, target[t]) -= w;
    }
    pass.backward(cot, grad);
  }
  return nll / T;
}

}  // namespace sdft
