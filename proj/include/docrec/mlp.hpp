#pragma once

#include <string>
#include <vector>

#include "docrec/rng.hpp"
#include "docrec/tensor.hpp"

namespace docrec {

// One tanh hidden layer with a sigmoid output unit:
//   s = sigmoid(tanh(x W1 + b1) W_out + b_out)
class Mlp {
public:
  Mlp() = default;

  Mlp(const std::string& prefix, std::size_t input, std::size_t hidden, std::uint64_t seed)
      : w1_(prefix + ".W1", Tensor(input, hidden)),
        b1_(prefix + ".b1", Tensor(1, hidden)),
        w_out_(prefix + ".W_out", Tensor(hidden, 1)),
        b_out_(prefix + ".b_out", Tensor(1, 1)) {
    Rng rng(seed);
    xavier_uniform(w1_.value, rng);
    xavier_uniform(w_out_.value, rng);
  }

  std::size_t input_dim() const noexcept { return w1_.value.rows(); }
  std::size_t hidden_dim() const noexcept { return w1_.value.cols(); }

  Param& w1() noexcept { return w1_; }
  Param& b1() noexcept { return b1_; }
  Param& w_out() noexcept { return w_out_; }
  Param& b_out() noexcept { return b_out_; }

  std::vector<Param*> parameters() { return {&w1_, &b1_, &w_out_, &b_out_}; }
  std::vector<const Param*> parameters() const { return {&w1_, &b1_, &w_out_, &b_out_}; }

  // Pre-sigmoid logits, one row per input row.
  Var logits(Tape& tape, Var x) const {
    Var h = docrec::tanh(add(matmul(x, tape.param(w1_)), tape.param(b1_)));
    return add(matmul(h, tape.param(w_out_)), tape.param(b_out_));
  }

  Var forward(Tape& tape, Var x) const { return sigmoid(logits(tape, x)); }

private:
  Param w1_, b1_, w_out_, b_out_;
};

}  // namespace docrec
