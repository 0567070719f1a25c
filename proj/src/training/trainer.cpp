#include "training/trainer.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "numerics/parallel.hpp"

namespace training {

using blocks::RunMode;
using numerics::derive_seed;
using numerics::Param;
using numerics::Rng;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace {

constexpr std::uint64_t kTrainTag = 0x747261696eULL;
constexpr std::uint64_t kEvalTag = 0x6576616cULL;
constexpr std::uint64_t kDropTag = 0x64726f70ULL;

struct ParamIndex {
  std::vector<std::string> names;
  std::vector<Param*> params;
  std::unordered_map<const Param*, std::size_t> index;
};

ParamIndex collect(Model& model) {
  ParamIndex out;
  model.visit_params([&](const std::string& name, Param& p) {
    out.index.emplace(&p, out.params.size());
    out.names.push_back(name);
    out.params.push_back(&p);
  });
  return out;
}

std::vector<Sample> make_eval_set(const TrainConfig& cfg) {
  std::vector<Sample> out;
  out.reserve(cfg.eval_samples);
  for (std::size_t i = 0; i < cfg.eval_samples; ++i) {
    Rng rng(derive_seed(cfg.seed, kEvalTag, i));
    out.push_back(generate(cfg.task, rng));
  }
  return out;
}

}  // namespace

MetricRow evaluate(Model& model, const TrainConfig& cfg, std::size_t step) {
  const std::vector<Sample> eval_set = make_eval_set(cfg);
  std::vector<double> losses(eval_set.size()), accs(eval_set.size());
  const std::size_t workers =
      std::min(numerics::resolve_threads(cfg.threads), eval_set.size());
  numerics::parallel_for(eval_set.size(), workers,
                         [&](std::size_t b0, std::size_t b1, std::size_t) {
                           for (std::size_t i = b0; i < b1; ++i) {
                             losses[i] = model.eval_loss(eval_set[i], &accs[i]);
                           }
                         });
  MetricRow row{step, "eval", 0.0, 0.0};
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    row.loss += losses[i];
    row.accuracy += accs[i];
  }
  row.loss /= static_cast<double>(eval_set.size());
  row.accuracy /= static_cast<double>(eval_set.size());
  return row;
}

TrainResult train(Model& model, const TrainConfig& cfg, const MetricCallback& on_metric) {
  cfg.task.validate();
  ParamIndex pi = collect(model);

  OptimHparams hp = cfg.opt;
  if (hp.total_steps == 0) hp.total_steps = cfg.max_steps;
  AdamW opt(pi.params, hp);

  const std::size_t workers =
      std::max<std::size_t>(1, std::min(numerics::resolve_threads(cfg.threads),
                                        cfg.batch_size));
  std::vector<std::vector<Tensor>> gbuf(workers);
  for (auto& buf : gbuf) buf.resize(pi.params.size());

  TrainResult res;
  double initial_loss = -1.0;
  std::size_t divergent_streak = 0;

  auto emit = [&](const MetricRow& row) {
    res.history.push_back(row);
    if (on_metric) on_metric(row);
  };

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<Sample> batch(cfg.batch_size);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      Rng rng(derive_seed(cfg.seed, kTrainTag, step, i));
      batch[i] = generate(cfg.task, rng);
    }

    std::vector<double> losses(cfg.batch_size, 0.0), accs(cfg.batch_size, 0.0);
    numerics::parallel_for(
        cfg.batch_size, workers, [&](std::size_t b0, std::size_t b1, std::size_t w) {
          auto& buf = gbuf[w];
          for (std::size_t i = b0; i < b1; ++i) {
            Tape tape;
            Tensor logits;
            Rng drop(derive_seed(cfg.seed, kDropTag, step, i));
            Var loss = model.loss(tape, batch[i], RunMode::train, &drop, &logits);
            losses[i] = tape.value(loss)[0];
            accs[i] = model.accuracy(logits, batch[i]);
            tape.backward(loss);
            for (const auto& [param, var] : tape.leaves()) {
              if (!tape.has_grad(var)) continue;
              const std::size_t idx = pi.index.at(param);
              if (buf[idx].numel() == 0) {
                buf[idx] = tape.grad(var);
              } else {
                buf[idx].add_(tape.grad(var));
              }
            }
          }
        });

    for (auto* p : pi.params) p->zero_grad();
    for (std::size_t w = 0; w < workers; ++w) {
      for (std::size_t idx = 0; idx < pi.params.size(); ++idx) {
        if (gbuf[w][idx].numel() == 0) continue;
        pi.params[idx]->grad.add_(gbuf[w][idx]);
        gbuf[w][idx].fill(0.0);
      }
    }
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    for (auto* p : pi.params) p->grad.scale_(inv_batch);

    opt.clip_gradients(pi.names);
    opt.step();
    res.steps_run = step;

    double train_loss = 0.0, train_acc = 0.0;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      train_loss += losses[i];
      train_acc += accs[i];
    }
    train_loss *= inv_batch;
    train_acc *= inv_batch;

    if (initial_loss < 0.0) initial_loss = train_loss;
    if (train_loss > cfg.divergence_factor * initial_loss) {
      if (++divergent_streak >= cfg.divergence_patience) {
        emit({step, "train", train_loss, train_acc});
        res.diverged = true;
        break;
      }
    } else {
      divergent_streak = 0;
    }

    const bool at_eval = cfg.eval_every > 0 && step % cfg.eval_every == 0;
    if (at_eval || step == cfg.max_steps) {
      emit({step, "train", train_loss, train_acc});
      MetricRow ev = evaluate(model, cfg, step);
      emit(ev);
      res.final_eval_loss = ev.loss;
      res.final_eval_accuracy = ev.accuracy;
      if (cfg.target_accuracy > 0.0 && ev.accuracy >= cfg.target_accuracy) {
        res.reached_target = true;
        break;
      }
    }
  }
  return res;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricRow>& history) {
  std::ofstream os(path);
  if (!os) throw numerics::IoError("cannot open " + path.string());
  os << "step,split,loss,accuracy\n";
  for (const auto& row : history) {
    os << row.step << ',' << row.split << ',' << row.loss << ',' << row.accuracy << '\n';
  }
}

GradCheckReport grad_check(Model& model, const Sample& sample, double eps) {
  ParamIndex pi = collect(model);

  Tape tape;
  Var loss = model.loss(tape, sample, RunMode::eval, nullptr, nullptr);
  tape.backward(loss);
  std::vector<Tensor> analytic(pi.params.size());
  for (std::size_t i = 0; i < pi.params.size(); ++i) {
    analytic[i] = Tensor(pi.params[i]->value.shape());
  }
  for (const auto& [param, var] : tape.leaves()) {
    if (tape.has_grad(var)) analytic[pi.index.at(param)] = tape.grad(var);
  }

  auto loss_value = [&] { return model.eval_loss(sample, nullptr); };

  GradCheckReport report;
  report.params_checked = pi.params.size();
  for (std::size_t i = 0; i < pi.params.size(); ++i) {
    Tensor& theta = pi.params[i]->value;
    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
    for (std::size_t j = 0; j < theta.numel(); ++j) {
      const double keep = theta[j];
      theta[j] = keep + eps;
      const double up = loss_value();
      theta[j] = keep - eps;
      const double down = loss_value();
      theta[j] = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      diff2 += (a - fd) * (a - fd);
      a2 += a * a;
      f2 += fd * fd;
      const double rel =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      if (rel > report.max_elem_rel_err) {
        report.max_elem_rel_err = rel;
        report.worst_elem = pi.names[i] + "[" + std::to_string(j) + "]";
        report.analytic = a;
        report.numeric = fd;
      }
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(f2), 1e-8});
    const double norm_rel = std::sqrt(diff2) / denom;
    if (norm_rel > report.max_norm_rel_err) {
      report.max_norm_rel_err = norm_rel;
      report.worst_param = pi.names[i];
    }
  }
  return report;
}

}  // namespace training
