#include "otkt/ctc.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "otkt/error.hpp"

namespace otkt::ctc {
namespace {

// Stands in for log(0). Finite so every node value stays finite; exp of
// anything this negative is exactly zero.
constexpr double kLogZero = -1e30;

}  // namespace

std::size_t min_frames(const TokenSequence& target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  return target.size() + repeats;
}

ad::Var ctc_loss(const ad::Var& log_probs, const TokenSequence& target) {
  const std::size_t t_len = log_probs.rows();
  const std::size_t vocab = log_probs.cols();
  if (t_len == 0) throw InvalidInput("ctc_loss: empty log-prob grid");
  for (int id : target) {
    if (id <= kBlank || static_cast<std::size_t>(id) >= vocab) {
      throw InvalidInput("ctc_loss: target id " + std::to_string(id) + " outside [1, " +
                         std::to_string(vocab) + ")");
    }
  }
  const std::size_t needed = min_frames(target);
  if (t_len < needed) {
    throw InvalidInput("ctc_loss: T_a=" + std::to_string(t_len) +
                       " frames but the target needs at least " + std::to_string(needed));
  }

  // blank-interleaved label states
  const std::size_t states = 2 * target.size() + 1;
  std::vector<std::size_t> label(states, kBlank);
  for (std::size_t k = 0; k < target.size(); ++k) label[2 * k + 1] = static_cast<std::size_t>(target[k]);

  ad::Graph& g = *log_probs.graph();
  const ad::Var emit = ad::gather_cols(log_probs, label);  // T x S

  Array2 init_mask(1, states, kLogZero);
  init_mask(0, 0) = 0.0;
  if (states > 1) init_mask(0, 1) = 0.0;

  std::vector<std::size_t> shift1(states, 0), shift2(states, 0);
  Array2 mask1(1, states, 0.0), mask2(1, states, kLogZero);
  mask1(0, 0) = kLogZero;
  for (std::size_t s = 1; s < states; ++s) shift1[s] = s - 1;
  for (std::size_t s = 2; s < states; ++s) {
    shift2[s] = s - 2;
    if (label[s] != kBlank && label[s] != label[s - 2]) mask2(0, s) = 0.0;
  }
  const ad::Var init = g.constant(std::move(init_mask));
  const ad::Var m1 = g.constant(std::move(mask1));
  const ad::Var m2 = g.constant(std::move(mask2));

  ad::Var alpha = ad::add(ad::row_slice(emit, 0, 1), init);
  for (std::size_t t = 1; t < t_len; ++t) {
    const ad::Var stay_or_step = ad::log_add_exp(alpha, ad::add(ad::gather_cols(alpha, shift1), m1));
    const ad::Var all = ad::log_add_exp(stay_or_step, ad::add(ad::gather_cols(alpha, shift2), m2));
    alpha = ad::add(all, ad::row_slice(emit, t, t + 1));
  }

  ad::Var log_lik;
  if (states == 1) {
    log_lik = alpha;
  } else {
    const std::vector<std::size_t> last{states - 1};
    const std::vector<std::size_t> before_last{states - 2};
    log_lik = ad::log_add_exp(ad::gather_cols(alpha, last), ad::gather_cols(alpha, before_last));
  }
  return ad::scale(log_lik, -1.0);
}

double ctc_loss(const Array2& log_probs, const TokenSequence& target) {
  ad::Graph g;
  return ctc_loss(g.constant(log_probs), target).item();
}

TokenSequence greedy_decode(const Array2& log_probs) {
  TokenSequence out;
  int prev = -1;
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    const auto row = log_probs.row(t);
    const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::size_t edit_distance(const TokenSequence& a, const TokenSequence& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double cer(const TokenSequence& hyp, const TokenSequence& ref) {
  if (ref.empty()) throw InvalidInput("cer: reference is empty");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

}  // namespace otkt::ctc
