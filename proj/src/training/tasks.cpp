#include "training/tasks.hpp"

#include <algorithm>
#include <string>

#include "numerics/tensor.hpp"

namespace training {

using numerics::ContractError;

const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::selective_copy: return "selective_copy";
    case TaskKind::induction_heads: return "induction_heads";
    case TaskKind::seq_reverse: return "seq_reverse";
  }
  return "?";
}

TaskKind task_from_name(const std::string& name) {
  if (name == "selective_copy") return TaskKind::selective_copy;
  if (name == "induction_heads") return TaskKind::induction_heads;
  if (name == "seq_reverse") return TaskKind::seq_reverse;
  throw ContractError("unknown task '" + name + "'");
}

void TaskSpec::validate() const {
  if (vocab_size < 4) {
    throw ContractError("TaskSpec: vocab_size must be >= 4 (tokens + noise + markers)");
  }
  if (seq_len == 0) throw ContractError("TaskSpec: seq_len must be >= 1");
  switch (kind) {
    case TaskKind::selective_copy:
      if (n_memorize >= seq_len) {
        throw ContractError("TaskSpec: n_memorize must be < seq_len");
      }
      break;
    case TaskKind::induction_heads:
      if (seq_len < 4) throw ContractError("TaskSpec: induction heads needs seq_len >= 4");
      break;
    case TaskKind::seq_reverse:
      break;
  }
}

std::size_t TaskSpec::target_slots() const {
  switch (kind) {
    case TaskKind::selective_copy: return n_memorize;
    case TaskKind::induction_heads: return 1;
    case TaskKind::seq_reverse: return seq_len;
  }
  return 0;
}

Sample gen_selective_copy(const TaskSpec& spec, numerics::Rng& rng) {
  spec.validate();
  const int content_lo = 1;
  const int content_hi = static_cast<int>(spec.vocab_size) - 1;
  Sample s;
  s.inputs.assign(spec.seq_len, 0);  // noise token
  // distinct content positions, uniform among all position subsets
  std::vector<std::size_t> positions(spec.seq_len);
  for (std::size_t i = 0; i < spec.seq_len; ++i) positions[i] = i;
  for (std::size_t i = 0; i < spec.n_memorize; ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(
                                                            spec.seq_len - 1 - i)));
    std::swap(positions[i], positions[j]);
  }
  positions.resize(spec.n_memorize);
  std::sort(positions.begin(), positions.end());
  s.targets.reserve(spec.n_memorize);
  for (std::size_t p : positions) {
    const int tok = static_cast<int>(rng.uniform_int(content_lo, content_hi));
    s.inputs[p] = tok;
    s.targets.push_back(tok);
  }
  return s;
}

Sample gen_induction_heads(const TaskSpec& spec, numerics::Rng& rng) {
  spec.validate();
  const int trigger = static_cast<int>(spec.vocab_size) - 1;
  const int plain_hi = trigger - 1;
  Sample s;
  s.inputs.resize(spec.seq_len);
  for (auto& tok : s.inputs) tok = static_cast<int>(rng.uniform_int(0, plain_hi));
  // first trigger early enough that the value after it precedes the final
  // trigger; the trigger then appears exactly twice
  const std::size_t p = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(spec.seq_len) - 3));
  s.inputs[p] = trigger;
  s.inputs[spec.seq_len - 1] = trigger;
  s.targets = {s.inputs[p + 1]};
  return s;
}

Sample gen_seq_reverse(const TaskSpec& spec, numerics::Rng& rng) {
  spec.validate();
  const int start = 0;
  Sample s;
  s.inputs.resize(spec.seq_len);
  for (auto& tok : s.inputs) {
    tok = static_cast<int>(rng.uniform_int(1, static_cast<int>(spec.vocab_size) - 1));
  }
  s.targets.assign(s.inputs.rbegin(), s.inputs.rend());
  s.dec_inputs.resize(spec.seq_len);
  s.dec_inputs[0] = start;
  for (std::size_t i = 1; i < spec.seq_len; ++i) s.dec_inputs[i] = s.targets[i - 1];
  return s;
}

Sample generate(const TaskSpec& spec, numerics::Rng& rng) {
  switch (spec.kind) {
    case TaskKind::selective_copy: return gen_selective_copy(spec, rng);
    case TaskKind::induction_heads: return gen_induction_heads(spec, rng);
    case TaskKind::seq_reverse: return gen_seq_reverse(spec, rng);
  }
  throw ContractError("generate: bad task kind");
}

Sample gen_selective_copy(const TaskSpec& spec) {
  numerics::Rng rng(spec.seed);
  return gen_selective_copy(spec, rng);
}
Sample gen_induction_heads(const TaskSpec& spec) {
  numerics::Rng rng(spec.seed);
  return gen_induction_heads(spec, rng);
}
Sample gen_seq_reverse(const TaskSpec& spec) {
  numerics::Rng rng(spec.seed);
  return gen_seq_reverse(spec, rng);
}

}  // namespace training
