#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sdft/rng.hpp"
#include "sdft/vocab.hpp"

namespace sdft {

// Logits table indexed by the last `window` tokens of the prefix (left-padded
// with pad when the prefix is shorter).
struct TabularShape {
  int window = 1;
  bool operator==(const TabularShape&) const = default;
};

// Pre-LayerNorm decoder-only transformer with learned positional embeddings,
// GELU MLP, and an untied output projection. With smeared_keys each head's key at
// position j is σ(a)·k_j + (1−σ(a))·k_{j−1} with one learned gate a per head, which lets a
// single attention layer match on the previous token (an induction lookup).
struct TransformerShape {
  int dim = 32;
  int layers = 2;
  int heads = 2;
  int context = 64;
  int mlp_ratio = 4;
  bool smeared_keys = true;
  bool operator==(const TransformerShape&) const = default;
};

using Shape = std::variant<TabularShape, TransformerShape>;

enum class Family { tabular, transformer };

std::string to_string(Family f);

struct PolicyParams {
  Vocab vocab;
  Shape shape;
  std::vector<double> theta;

  Family family() const;
  std::size_t size() const { return theta.size(); }
};

// Exact parameter count implied by the layout. Throws ConfigError on invalid shapes.
std::size_t parameter_count(const Vocab& vocab, const Shape& shape);

// Tabular logits ~ U[-0.05, 0.05]; transformer matrices ~ N(0, 1/fan_in),
// LayerNorm gains 1, biases 0. Bit-identical for a given seed.
PolicyParams init_policy(const Vocab& vocab, const Shape& shape, std::uint64_t seed);

// Throws ConfigError if theta does not match the layout or is non-finite.
void validate(const PolicyParams& params);

// Parameter-shaped accumulator. Every estimator returns one of these in
// gradient-descent convention (the trainer subtracts it).
struct GradientVector {
  std::vector<double> values;

  GradientVector() = default;
  explicit GradientVector(std::size_t n) : values(n, 0.0) {}

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  GradientVector& operator+=(const GradientVector& other);
  GradientVector& operator*=(double s);
  double norm() const;
  bool finite() const;
};

struct StepDistribution {
  std::vector<double> probs;
};

// Row-major dense matrix; rows index response positions, columns the vocabulary.
struct RowMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  RowMatrix() = default;
  RowMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

// In-place log-softmax of a logits row.
void log_softmax_inplace(std::span<double> row);

StepDistribution step_distribution(const PolicyParams& params, std::span<const TokenId> prefix);
std::vector<double> step_log_probs(const PolicyParams& params, std::span<const TokenId> prefix);

struct ResponseLogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

ResponseLogProb logprob_response(const PolicyParams& params, std::span<const TokenId> prompt,
                                 std::span<const TokenId> response);

struct Trajectory {
  TokenSeq prompt;
  TokenSeq response;
  std::vector<double> student_logprobs;  // at temperature 1
  std::vector<double> sampler_logprobs;  // at the sampling temperature
  double temperature = 1.0;
};

Trajectory sample_response(const PolicyParams& params, std::span<const TokenId> prompt, int max_len,
                           double temperature, Rng& rng);

// Argmax decoding (ties go to the lowest id); stops at eos or max_len.
TokenSeq greedy_decode(const PolicyParams& params, std::span<const TokenId> prompt, int max_len);

GradientVector grad_logprob(const PolicyParams& params, std::span<const TokenId> prompt,
                            std::span<const TokenId> response);

// Mean per-token negative log-likelihood of target after prompt. When grad is
// non-empty, adds scale·∇ of that mean into it.
double mean_nll(const PolicyParams& params, std::span<const TokenId> prompt, std::span<const TokenId> target,
                std::span<double> grad = {}, double scale = 1.0);

// One forward pass over prompt ⧺ response that exposes the log-softmax row at
// every response position and can backpropagate arbitrary logit cotangents.
// Row t of log_probs() is log π(· | prompt ⧺ response[<t]).
class ResponsePass {
 public:
  ResponsePass(const PolicyParams& params, std::span<const TokenId> prompt,
               std::span<const TokenId> response);
  ~ResponsePass();
  ResponsePass(ResponsePass&&) noexcept;
  ResponsePass& operator=(ResponsePass&&) noexcept;

  const RowMatrix& log_probs() const { return log_probs_; }
  int length() const { return log_probs_.rows; }

  // grad += Σ_t Σ_v cotangent(t, v) · ∂ z_t[v] / ∂θ, where z_t are the logits
  // producing row t. cotangent must be length() × vocab.size.
  void backward(const RowMatrix& cotangent, std::span<double> grad) const;

 private:
  struct Impl;
  const PolicyParams* params_;
  RowMatrix log_probs_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sdft
