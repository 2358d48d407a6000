#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moetts/model.hpp"

namespace moetts {

struct CheckResult {
  std::string name;
  bool passed = false;
  double metric = 0.0;  // check-specific (max delta, max rel error, ...)
  std::string detail;
};

// Random mixed-modality sequence over the full vocabulary; the modality mask
// is derived from the ids.
EncodedSequence random_mixed_sequence(const Vocabulary& vocab, int length, std::uint64_t seed);

// MoE forward vs the dense reference built from the same weights.
CheckResult check_init_equivalence(const Model& moe, int num_sequences, std::uint64_t seed);

// Per component: perturbing the speech expert must leave text rows bitwise
// unchanged under moe_apply, for every layer.
CheckResult check_routing_partition(const Model& moe, std::uint64_t seed);

// logits[i] must not depend on ids[j], j > i.
CheckResult check_causality(const Model& m, int trials, std::uint64_t seed);

// Arbitrarily perturbed speech experts must not move pure-text logits.
CheckResult check_frozen_text_invariance(const Model& moe, const Model& base, std::uint64_t seed);

// Central finite differences on sampled trainable coordinates of a small
// double-precision model. rel error threshold 1e-4, step 1e-5.
CheckResult gradient_check(Model& m, const EncodedSequence& seq, int num_coords,
                           std::uint64_t seed);

// Every trainable tensor must receive a nonzero gradient on some batch.
CheckResult check_gradient_flow(Model& m, const std::vector<EncodedSequence>& seqs);

// Cached greedy decoding must match step-by-step full re-forward decoding.
CheckResult check_generation_cache(const Model& m, const EncodedSequence& prefix, int max_len);

// The standard small-model suite run by `verify` on a fresh conversion.
std::vector<CheckResult> run_invariant_suite(const Model& moe, const Model& base,
                                             std::uint64_t seed);

}  // namespace moetts
