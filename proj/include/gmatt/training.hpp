#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "gmatt/checkpoint.hpp"
#include "gmatt/dataset.hpp"
#include "gmatt/model.hpp"

namespace gmatt {

// Triangular wave: rises eta_min -> peak over the first half of each cycle,
// falls back over the second half. The peak of cycle c is
// eta_min + gamma^c * (eta_max - eta_min).
inline double lr_at(double epoch, const LrSchedule& s) {
  if (epoch < 0) throw RuntimeError("lr_at: negative epoch");
  const double n = static_cast<double>(s.cycle_epochs);
  const double cycle = std::floor(epoch / n);
  const double t = epoch - cycle * n;
  const double peak = s.eta_min + std::pow(s.gamma, cycle) * (s.eta_max - s.eta_min);
  const double half = n / 2.0;
  const double frac = t <= half ? t / half : (n - t) / half;
  return s.eta_min + (peak - s.eta_min) * frac;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// One bias-corrected Adam update over every parameter with a gradient.
template <class S>
void adam_step(ModelParams<S>& params, AdamState<S>& state, double lr,
               const AdamConfig& cfg = {}) {
  if (lr <= 0) throw RuntimeError("adam_step: lr must be positive");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.tensors) {
    if (!t.requires_grad) continue;
    if (t.grad.size() == 0) t.zero_grad();
    if (!all_finite(t.grad)) throw NonFiniteError("non-finite gradient in " + name);
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      state.m[name] = Mat<S>::Zero(t.value.rows(), t.value.cols());
      state.v[name] = Mat<S>::Zero(t.value.rows(), t.value.cols());
      mit = state.m.find(name);
    }
    Mat<S>& m = mit->second;
    Mat<S>& v = state.v[name];
    m = static_cast<S>(cfg.beta1) * m + static_cast<S>(1 - cfg.beta1) * t.grad;
    v = static_cast<S>(cfg.beta2) * v + static_cast<S>(1 - cfg.beta2) * t.grad.cwiseProduct(t.grad);
    Mat<S> mhat = m / static_cast<S>(bc1);
    Mat<S> vhat = v / static_cast<S>(bc2);
    t.value.array() -=
        static_cast<S>(lr) * mhat.array() / (vhat.array().sqrt() + static_cast<S>(cfg.eps));
  }
}

// Fresh checkpoint with seeded Xavier parameters and the grammar-derived
// vocabularies. Vocabulary sizes in cfg are filled in here.
template <class S>
Checkpoint<S> make_checkpoint(ModelConfig cfg, const LrSchedule& sched, std::uint64_t seed,
                              bool with_class) {
  Checkpoint<S> ckpt;
  Vocab enc = build_encoder_vocab();
  Vocab dec = build_decoder_vocab();
  cfg.encoder_vocab = enc.size();
  cfg.decoder_vocab = dec.size();
  ckpt.meta.config = cfg;
  ckpt.meta.sched = sched;
  ckpt.meta.seed = seed;
  ckpt.meta.with_class = with_class;
  ckpt.meta.encoder_symbols = enc.symbols;
  ckpt.meta.decoder_symbols = dec.symbols;
  Rng rng(derive_seed(seed, 0xC0DE));
  ckpt.params = init_params<S>(cfg, rng);
  return ckpt;
}

struct TrainOptions {
  int epochs = 10;          // total target epoch count (resume-aware)
  int batch_size = 32;
  LrSchedule sched;
  AdamConfig adam;
  std::string log_path;         // CSV: epoch,split,loss,char_acc,lr
  std::string checkpoint_path;  // written after every epoch when set
};

struct EpochLog {
  int epoch;
  double train_loss, train_acc;
  double valid_loss, valid_acc;
  double lr;
};

struct TrainResult {
  std::vector<EpochLog> log;
  bool aborted_non_finite = false;
};

namespace train_detail {

template <class S>
struct EncodedRecord {
  TreeInput<S> input;
  std::vector<int> target;
};

template <class S>
std::vector<EncodedRecord<S>> encode_records(const std::vector<ReactionRecord>& records,
                                             const CheckpointMeta& meta, const Vocab& enc_vocab,
                                             const Vocab& dec_vocab) {
  std::vector<EncodedRecord<S>> out;
  out.reserve(records.size());
  for (const ReactionRecord& r : records) {
    if (meta.with_class && !r.class_id) throw MissingClassError();
    EncodedRecord<S> er;
    er.input = encode_product<S>(r.product, meta.with_class ? r.class_id : std::nullopt,
                                 enc_vocab, meta.config);
    er.target = target_ids(r, dec_vocab);
    if (static_cast<int>(er.target.size()) > meta.config.max_out + 2)
      throw LengthExceededError("target exceeds max output length");
    out.push_back(std::move(er));
  }
  return out;
}

// Teacher-forced loss and character accuracy of one record; used for both
// training (with graph reuse for backward) and validation.
template <class S>
struct EvalAccum {
  double loss_sum = 0;
  long correct = 0;
  long total = 0;

  double mean_loss(long records) const { return records ? loss_sum / records : 0.0; }
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

template <class S>
void score_logits(const Mat<S>& logits, const std::vector<int>& labels, EvalAccum<S>& acc) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best;
    logits.row(r).maxCoeff(&best);
    acc.correct += (static_cast<int>(best) == labels[r]);
    acc.total += 1;
  }
}

}  // namespace train_detail

// Teacher-forced training with the triangular cyclic schedule and Adam.
// Epochs [meta.epochs_completed, opt.epochs) are run, so calling train again
// on a loaded checkpoint continues the uninterrupted trajectory exactly:
// every epoch derives its shuffle and dropout streams from (seed, epoch).
template <class S>
TrainResult train(Checkpoint<S>& ckpt, const std::vector<ReactionRecord>& train_recs,
                  const std::vector<ReactionRecord>& valid_recs, const TrainOptions& opt,
                  std::ostream* progress = nullptr) {
  using train_detail::EncodedRecord;
  using train_detail::EvalAccum;
  CheckpointMeta& meta = ckpt.meta;
  meta.config.validate();
  meta.sched = opt.sched;
  const Vocab enc_vocab = Vocab::from_symbols(meta.encoder_symbols);
  const Vocab dec_vocab = Vocab::from_symbols(meta.decoder_symbols);
  auto train_enc = train_detail::encode_records<S>(train_recs, meta, enc_vocab, dec_vocab);
  auto valid_enc = train_detail::encode_records<S>(valid_recs, meta, enc_vocab, dec_vocab);
  if (train_enc.empty()) throw EmptyBatchError();

  std::ofstream log_file;
  if (!opt.log_path.empty()) {
    const bool fresh = meta.epochs_completed == 0;
    log_file.open(opt.log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log_file) throw DataError("cannot write training log: " + opt.log_path);
    if (fresh) log_file << "epoch,split,loss,char_acc,lr\n";
    log_file << std::setprecision(17);
  }

  TrainResult result;
  const int num_batches =
      static_cast<int>((train_enc.size() + opt.batch_size - 1) / opt.batch_size);
  for (int epoch = meta.epochs_completed; epoch < opt.epochs; ++epoch) {
    std::vector<std::size_t> order(train_enc.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(meta.seed, epoch, 0x5affULL));
    shuffle_rng.shuffle(order);

    EvalAccum<S> train_acc;
    double epoch_lr = lr_at(epoch, meta.sched);
    bool aborted = false;
    for (int b = 0; b < num_batches && !aborted; ++b) {
      const std::size_t begin = static_cast<std::size_t>(b) * opt.batch_size;
      const std::size_t end = std::min(order.size(), begin + opt.batch_size);
      const S inv = S(1) / static_cast<S>(end - begin);
      Rng dropout_rng(derive_seed(meta.seed, epoch, b, 0xd809ULL));
      DropoutCtx<S> dc{true, meta.config.dropout, &dropout_rng};

      ckpt.params.zero_grad();
      double batch_loss = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const EncodedRecord<S>& er = train_enc[order[i]];
        Graph<S> g;
        auto rl = teacher_forced_loss(g, er.input, er.target, ckpt.params, meta.config, dc,
                                      Vocab::kPad);
        g.backward(rl.loss, inv);
        const double loss = static_cast<double>(g.value(rl.loss)(0, 0));
        batch_loss += loss;
        train_acc.loss_sum += loss;
        std::vector<int> labels(er.target.begin() + 1, er.target.end());
        train_detail::score_logits(g.value(rl.logits), labels, train_acc);
      }
      if (!std::isfinite(batch_loss)) {
        result.aborted_non_finite = true;
        aborted = true;
        break;
      }
      epoch_lr = lr_at(epoch + static_cast<double>(b) / num_batches, meta.sched);
      adam_step(ckpt.params, ckpt.adam, epoch_lr, opt.adam);
    }
    if (result.aborted_non_finite) break;

    EvalAccum<S> valid_acc;
    DropoutCtx<S> eval_dc;
    for (const EncodedRecord<S>& er : valid_enc) {
      Graph<S> g;
      auto rl =
          teacher_forced_loss(g, er.input, er.target, ckpt.params, meta.config, eval_dc,
                              Vocab::kPad);
      valid_acc.loss_sum += static_cast<double>(g.value(rl.loss)(0, 0));
      std::vector<int> labels(er.target.begin() + 1, er.target.end());
      train_detail::score_logits(g.value(rl.logits), labels, valid_acc);
    }

    EpochLog el{epoch,
                train_acc.mean_loss(static_cast<long>(train_enc.size())),
                train_acc.accuracy(),
                valid_acc.mean_loss(static_cast<long>(valid_enc.size())),
                valid_acc.accuracy(),
                epoch_lr};
    result.log.push_back(el);
    if (log_file) {
      log_file << epoch << ",train," << el.train_loss << ',' << el.train_acc << ',' << el.lr
               << '\n';
      if (!valid_enc.empty())
        log_file << epoch << ",valid," << el.valid_loss << ',' << el.valid_acc << ',' << el.lr
                 << '\n';
      log_file.flush();
    }
    if (progress)
      (*progress) << "epoch " << epoch << " train_loss=" << el.train_loss
                  << " train_acc=" << el.train_acc << " valid_loss=" << el.valid_loss
                  << " lr=" << el.lr << '\n';

    meta.epochs_completed = epoch + 1;
    meta.adam_step = ckpt.adam.step;
    if (!opt.checkpoint_path.empty()) save_checkpoint(ckpt, opt.checkpoint_path);
  }
  return result;
}

}  // namespace gmatt
