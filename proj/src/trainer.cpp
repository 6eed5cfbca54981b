#include "wsed/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "wsed/checkpoint.hpp"
#include "wsed/ops.hpp"

namespace wsed {

AdamState AdamState::init(ModelParams& params) {
    AdamState s;
    params.for_each_trainable([&](const std::string&, Tensor& t) {
        s.m.push_back(Tensor::zeros(t.shape()));
        s.v.push_back(Tensor::zeros(t.shape()));
    });
    return s;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamParams& adam) {
    std::size_t i = 0;
    state.t += 1;
    const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.t));
    params.for_each_trainable([&](const std::string& name, Tensor& theta) {
        if (i >= grads.size()) throw ContractError("adam_step: missing gradient for " + name);
        const Tensor& g = grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        if (!g.empty()) {
            if (!g.same_shape(theta))
                throw ContractError("adam_step: gradient shape " + g.shape_str() + " for " + name +
                                    " does not match parameter " + theta.shape_str());
            m.arr() = adam.beta1 * m.arr() + (1.0 - adam.beta1) * g.arr();
            v.arr() = adam.beta2 * v.arr() + (1.0 - adam.beta2) * g.arr().square();
        } else {
            m.arr() *= adam.beta1;
            v.arr() *= adam.beta2;
        }
        theta.arr() -= adam.lr * (m.arr() / c1) / ((v.arr() / c2).sqrt() + adam.eps);
        ++i;
    });
    if (i != grads.size()) throw ContractError("adam_step: gradient count mismatch");
}

namespace {

std::string format_loss(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

EvalReport run_validation(ModelParams& params, const ValidationSet& val, double tau) {
    std::vector<LabelledFrames> predicted;
    predicted.reserve(val.bags.size());
    for (const Bag& bag : val.bags) {
        FramePredictions p = predict_frames(params, bag.features);
        predicted.push_back(LabelledFrames{bag.id, threshold(p, tau)});
    }
    return frame_metrics(predicted, val.truth);
}

} // namespace

TrainResult train(ModelParams& params, const std::vector<Bag>& train_bags,
                  const std::optional<ValidationSet>& validation, const TrainConfig& config,
                  const std::filesystem::path& out_dir,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
    if (config.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (train_bags.empty()) throw TrainError("train: no training bags");
    std::filesystem::create_directories(out_dir);

    std::vector<int> labels;
    labels.reserve(train_bags.size());
    for (const Bag& b : train_bags) labels.push_back(b.label);
    HnhSampler sampler(labels, config.batch_size, config.seed, config.anchor);

    AdamState adam_state = AdamState::init(params);
    std::ofstream log(out_dir / "metrics.csv");
    if (!log) throw DataError("cannot write metric log under " + out_dir.string());
    log << "epoch,train_loss,val_precision,val_recall,val_f1\n";

    TrainResult result;
    for (long epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto batches = sampler.next_epoch();
        double epoch_loss = 0.0;
        long batch_no = 0;
        for (const std::vector<std::size_t>& batch : batches) {
            ++batch_no;
            Graph g;
            std::vector<const FeatureMatrix*> feats;
            std::vector<int> batch_labels;
            feats.reserve(batch.size());
            for (std::size_t idx : batch) {
                feats.push_back(&train_bags[idx].features);
                batch_labels.push_back(train_bags[idx].label);
            }
            CrnnForward fwd = crnn_forward(g, params, feats, Mode::kTrain);
            const NodeId loss = batch_loss_node(g, config.loss, fwd.predictions, batch_labels);
            const double loss_value = g.value(loss).scalar_value();
            if (!std::isfinite(loss_value))
                throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_no));
            g.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(fwd.params.size());
            for (const auto& [name, node] : fwd.params) {
                (void)name;
                grads.push_back(g.has_grad(node) ? g.grad(node) : Tensor());
            }
            adam_step(params, grads, adam_state, config.adam);
            epoch_loss += loss_value;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = epoch_loss / static_cast<double>(batches.size());
        const bool eval_now = validation && config.eval_interval > 0 &&
                              (epoch % config.eval_interval == 0 || epoch == config.epochs);
        if (eval_now) {
            em.val = run_validation(params, *validation, config.threshold);
            if (em.val->f1 > result.best_f1) {
                result.best_f1 = em.val->f1;
                result.best_epoch = epoch;
                result.best_checkpoint = out_dir / "checkpoint_best.wsck";
                save_checkpoint(result.best_checkpoint, params);
            }
        }
        log << epoch << ',' << format_loss(em.train_loss);
        if (em.val) {
            log << ',' << format_loss(em.val->precision) << ',' << format_loss(em.val->recall) << ','
                << format_loss(em.val->f1);
        } else {
            log << ",,,";
        }
        log << '\n';
        log.flush();

        if (config.checkpoint_interval > 0 && epoch % config.checkpoint_interval == 0 &&
            epoch != config.epochs) {
            save_checkpoint(out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".wsck"), params);
        }
        if (on_epoch) on_epoch(em);
        result.history.push_back(std::move(em));
    }

    result.final_checkpoint = out_dir / "checkpoint_final.wsck";
    save_checkpoint(result.final_checkpoint, params);
    return result;
}

} // namespace wsed
