#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "propenc/encoder.hpp"
#include "propenc/errors.hpp"
#include "propenc/loss.hpp"
#include "propenc/pairing.hpp"
#include "propenc/tokenizer.hpp"

namespace propenc {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size_sentences = 8;
  double temperature = 0.01;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;
  std::size_t workers = 1;
  double val_fraction = 0.1;

  void validate() const {
    if (epochs < 1) throw DataError("epochs must be >= 1");
    if (learning_rate <= 0.0) throw DataError("learning_rate must be > 0");
    if (workers < 1) throw DataError("workers must be >= 1");
    if (temperature <= 0.0) throw DataError("temperature must be > 0");
    if (val_fraction <= 0.0 || val_fraction >= 1.0)
      throw DataError("val_fraction must be in (0, 1)");
  }
};

// Linear decay applied at epoch boundaries: lr * (1 - e/epochs). Constant
// within an epoch; reaches 0 after the final epoch.
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch >= cfg.epochs) throw DataError("lr_at_epoch: epoch out of range");
  return cfg.learning_rate *
         (1.0 - static_cast<double>(epoch) / static_cast<double>(cfg.epochs));
}

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

inline AdamState init_adam_state(const EncoderParams& params) {
  AdamState s;
  params.visit([&](const std::string&, const Tensor& t) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  });
  return s;
}

// Decoupled-weight-decay Adam with bias-corrected moments.
inline void adamw_step(EncoderParams& params, const Gradient& grads,
                       AdamState& state, double lr, const TrainConfig& cfg) {
  for (std::size_t i = 0; i < grads.parts.size(); ++i)
    if (!grads.parts[i].all_finite())
      throw NumericError("adamw_step: non-finite gradient in " +
                         grads.names[i]);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t idx = 0;
  params.visit([&](const std::string&, Tensor& t) {
    const Tensor& g = grads.parts[idx];
    Tensor& m = state.m[idx];
    Tensor& v = state.v[idx];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double gi = g.at(i);
      m.at(i) = cfg.beta1 * m.at(i) + (1.0 - cfg.beta1) * gi;
      v.at(i) = cfg.beta2 * v.at(i) + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m.at(i) / bc1;
      const double vhat = v.at(i) / bc2;
      t.at(i) -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps)) +
                 lr * cfg.weight_decay * t.at(i);
    }
    ++idx;
  });
}

namespace detail {

struct BatchForward {
  std::vector<EncoderGraph> graphs;                    // one per worker
  std::vector<std::vector<Tape::Var>> embedding_vars;  // per worker, local
  std::vector<std::vector<std::size_t>> prop_indices;  // per worker, global
  std::vector<std::vector<double>> embeddings;         // gathered, batch order
};

// Forward the batch sentences shard by shard and gather every proposition
// embedding into batch order.
inline BatchForward forward_sharded(const Minibatch& batch, const Vocab& vocab,
                                    const EncoderParams& params,
                                    std::size_t workers) {
  const std::size_t n_sent = batch.sentences.size();
  if (workers == 0 || n_sent % workers != 0)
    throw DataError("gather_and_backprop: workers must divide sentence count");
  const std::size_t per = n_sent / workers;

  BatchForward fwd;
  fwd.embeddings.resize(batch.propositions.size());
  fwd.graphs.reserve(workers);
  fwd.embedding_vars.resize(workers);
  fwd.prop_indices.resize(workers);

  for (std::size_t w = 0; w < workers; ++w) {
    fwd.graphs.emplace_back(params);
    EncoderGraph& g = fwd.graphs.back();
    for (std::size_t s = w * per; s < (w + 1) * per; ++s) {
      std::vector<BinaryMask> masks;
      std::vector<std::size_t> prop_idx;
      for (std::size_t p = 0; p < batch.propositions.size(); ++p)
        if (batch.propositions[p].sentence_idx == s) {
          masks.push_back(batch.propositions[p].mask);
          prop_idx.push_back(p);
        }
      if (masks.empty()) continue;
      const auto ids = vocab.encode(batch.sentences[s]);
      const auto vars = g.encode_propositions(ids, masks);
      for (std::size_t k = 0; k < vars.size(); ++k) {
        fwd.embedding_vars[w].push_back(vars[k]);
        fwd.prop_indices[w].push_back(prop_idx[k]);
        fwd.embeddings[prop_idx[k]] = g.embedding_value(vars[k]);
      }
    }
  }
  return fwd;
}

}  // namespace detail

struct GatherResult {
  double loss = 0.0;
  Gradient grads;
};

// Simulated multi-worker step: each worker forwards its sentence shard, all
// embeddings are gathered, every worker evaluates the same full-batch loss
// and backpropagates through its local shard only. The combined gradient
// equals the single-worker full-batch gradient.
inline GatherResult gather_and_backprop(const Minibatch& batch,
                                        const Vocab& vocab,
                                        const EncoderParams& params,
                                        std::size_t workers, double tau) {
  auto fwd = detail::forward_sharded(batch, vocab, params, workers);

  GatherResult out;
  bool first = true;
  for (std::size_t w = 0; w < workers; ++w) {
    // Every worker sees the gathered batch; the loss value must agree.
    LossResult loss = supcon_loss(fwd.embeddings, batch.positives, tau);
    if (first) {
      out.loss = loss.value;
      first = false;
    } else if (loss.value != out.loss) {
      throw NumericError("gather_and_backprop: loss diverged across workers");
    }
    EncoderGraph& g = fwd.graphs[w];
    for (std::size_t k = 0; k < fwd.embedding_vars[w].size(); ++k) {
      const auto& grad = loss.embedding_grads[fwd.prop_indices[w][k]];
      Tensor seed({std::size_t{1}, grad.size()},
                  std::vector<double>(grad.begin(), grad.end()));
      g.tape().seed(fwd.embedding_vars[w][k], seed);
    }
    g.tape().backward();
    Gradient local = g.param_grads();
    if (out.grads.parts.empty()) {
      out.grads = std::move(local);
    } else {
      for (std::size_t i = 0; i < local.parts.size(); ++i)
        for (std::size_t c = 0; c < local.parts[i].size(); ++c)
          out.grads.parts[i].at(c) += local.parts[i].at(c);
    }
  }
  return out;
}

struct Checkpoint {
  EncoderParams params;
  std::size_t epoch = 0;
  double val_loss = 0.0;
};

struct EpochLog {
  std::size_t epoch;
  double lr;
  double train_loss;
  double val_loss;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> history;
  bool diverged = false;
};

namespace detail {

inline double mean_loss(const std::vector<Minibatch>& batches,
                        const Vocab& vocab, const EncoderParams& params,
                        double tau) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& b : batches) {
    if (b.propositions.size() < 2) continue;
    auto fwd = forward_sharded(b, vocab, params, 1);
    total += supcon_loss(fwd.embeddings, b.positives, tau).value;
    ++counted;
  }
  if (counted == 0) throw DataError("no evaluatable batches");
  return total / static_cast<double>(counted);
}

}  // namespace detail

// Epoch loop: rebuild minibatches with an epoch-mixed seed, step through
// them, evaluate validation loss, and keep the snapshot with the smallest
// validation loss. Non-finite loss aborts with the last good checkpoint.
inline TrainResult train(const std::vector<LabeledPair>& corpus,
                         const Vocab& vocab, const EncoderConfig& enc_cfg,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.size() < 2)
    throw DataError("train: need at least 2 sentence pairs for a val split");

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(cfg.seed ^ 0x5eedULL);
  split_rng.shuffle(order);
  std::size_t n_val = static_cast<std::size_t>(
      std::ceil(cfg.val_fraction * static_cast<double>(corpus.size())));
  n_val = std::max<std::size_t>(1, std::min(n_val, corpus.size() - 1));

  std::vector<LabeledPair> train_pairs, val_pairs;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < order.size() - n_val ? train_pairs : val_pairs)
        .push_back(corpus[order[i]]);

  EncoderParams params = init_params(enc_cfg, cfg.seed);
  AdamState adam = init_adam_state(params);

  TrainResult result;
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    const std::uint64_t epoch_seed =
        cfg.seed + 0x9e3779b97f4a7c15ULL * (epoch + 1);
    auto batches =
        build_minibatches(train_pairs, cfg.batch_size_sentences, epoch_seed);

    double train_total = 0.0;
    std::size_t train_batches = 0;
    bool aborted = false;
    for (const auto& batch : batches) {
      if (batch.propositions.size() < 2) continue;
      // The final short batch may not divide evenly; the gather semantics
      // make W=1 gradients identical, so fall back rather than pad.
      const std::size_t w = (batch.sentences.size() % cfg.workers == 0)
                                ? cfg.workers
                                : 1;
      try {
        GatherResult step = gather_and_backprop(batch, vocab, params, w,
                                                cfg.temperature);
        if (!std::isfinite(step.loss)) {
          aborted = true;
          break;
        }
        train_total += step.loss;
        ++train_batches;
        adamw_step(params, step.grads, adam, lr, cfg);
      } catch (const NumericError&) {
        // divergence: abort and fall back to the last good checkpoint
        aborted = true;
        break;
      }
    }
    if (aborted || train_batches == 0) {
      result.diverged = true;
      break;
    }

    auto val_batches =
        build_minibatches(val_pairs, cfg.batch_size_sentences, cfg.seed);
    double val_loss = 0.0;
    try {
      val_loss = detail::mean_loss(val_batches, vocab, params,
                                   cfg.temperature);
    } catch (const NumericError&) {
      result.diverged = true;
      break;
    }
    result.history.push_back({epoch, lr,
                              train_total / static_cast<double>(train_batches),
                              val_loss});
    if (!std::isfinite(val_loss)) {
      result.diverged = true;
      break;
    }
    if (!have_best || val_loss < result.best.val_loss) {
      result.best = {params, epoch, val_loss};
      have_best = true;
    }
  }
  if (!have_best)
    throw NumericError("train: no finite checkpoint produced");
  return result;
}

}  // namespace propenc
