#pragma once

#include <cstddef>

#include "otkt/array2.hpp"
#include "otkt/autodiff.hpp"
#include "otkt/tokens.hpp"

namespace otkt::ctc {

// Fewest frames that can emit target: one per label plus one blank between
// each pair of equal neighbours.
std::size_t min_frames(const TokenSequence& target);

// -log p(target | log_probs) over all CTC paths. log_probs is T x V with
// rows already log-normalized. The recursion is built from graph ops, so
// the gradient comes from the tape.
ad::Var ctc_loss(const ad::Var& log_probs, const TokenSequence& target);
double ctc_loss(const Array2& log_probs, const TokenSequence& target);

// Per-frame argmax, merge repeats, drop blanks.
TokenSequence greedy_decode(const Array2& log_probs);

std::size_t edit_distance(const TokenSequence& a, const TokenSequence& b);
// edit_distance(hyp, ref) / |ref|. Throws on an empty reference.
double cer(const TokenSequence& hyp, const TokenSequence& ref);

}  // namespace otkt::ctc
