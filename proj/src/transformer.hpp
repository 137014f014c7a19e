#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sdft/policy.hpp"

namespace sdft::detail {

// Offsets of every tensor inside the flat theta vector.
struct TransformerLayout {
  struct Block {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, smear, ln2_g, ln2_b, w1, b1, w2, b2;  // smear: one gate per head
  };

  int vocab = 0, dim = 0, layers = 0, heads = 0, context = 0, hidden = 0;
  bool smeared_keys = false;
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<Block> blocks;
  std::size_t lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;
  std::size_t total = 0;

  static TransformerLayout make(int vocab_size, const TransformerShape& shape);
};

// Activations of one forward pass, kept for the backward pass.
class TransformerForward {
 public:
  TransformerForward(const PolicyParams& params, std::span<const TokenId> tokens);

  int length() const { return n_; }
  // n × vocab logits; row i predicts the token after position i.
  const RowMatrix& logits() const { return logits_; }
  void backward(const RowMatrix& dlogits, std::span<double> grad) const;

 private:
  struct LayerCache {
    std::vector<double> x_in, xhat1, rstd1, h1, q, k, ks, v, att, o, x_mid, xhat2, rstd2, h2, u, g;
  };

  const PolicyParams& params_;
  TransformerLayout layout_;
  std::vector<TokenId> tokens_;
  int n_ = 0;
  std::vector<LayerCache> cache_;
  std::vector<double> x_final_, xhatf_, rstdf_, hf_;
  RowMatrix logits_;
};

}  // namespace sdft::detail
