#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "numerics/rng.hpp"

namespace training {

enum class TaskKind { selective_copy, induction_heads, seq_reverse };

const char* task_name(TaskKind k);
TaskKind task_from_name(const std::string& name);

// Token layout per task:
//   selective_copy: 0 is the noise token; content tokens come from 1..V-1.
//   induction_heads: V-1 is the trigger; ordinary tokens come from 0..V-2.
//   seq_reverse: 0 is the decoder start token; source tokens from 1..V-1.
struct TaskSpec {
  TaskKind kind = TaskKind::selective_copy;
  std::size_t seq_len = 64;
  std::size_t vocab_size = 16;
  std::size_t n_memorize = 4;  // selective_copy only
  std::uint64_t seed = 0;

  void validate() const;
  // number of token slots the model predicts per sample
  std::size_t target_slots() const;
};

struct Sample {
  std::vector<int> inputs;      // encoder/source token ids
  std::vector<int> dec_inputs;  // teacher-forced decoder input (seq_reverse only)
  std::vector<int> targets;
};

// Stream forms, driven by an explicit generator.
Sample gen_selective_copy(const TaskSpec& spec, numerics::Rng& rng);
Sample gen_induction_heads(const TaskSpec& spec, numerics::Rng& rng);
Sample gen_seq_reverse(const TaskSpec& spec, numerics::Rng& rng);
Sample generate(const TaskSpec& spec, numerics::Rng& rng);

// Deterministic forms seeded from the spec itself.
Sample gen_selective_copy(const TaskSpec& spec);
Sample gen_induction_heads(const TaskSpec& spec);
Sample gen_seq_reverse(const TaskSpec& spec);

}  // namespace training
