#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "secvit/data.hpp"
#include "secvit/model.hpp"
#include "secvit/optim.hpp"

namespace secvit {

struct TrainOptions {
    int epochs = 20;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 0.05;
    std::uint64_t seed = 1;
    double target_accuracy = -1.0;  // stop early once the end-of-epoch accuracy reaches this
    std::ostream* log = nullptr;
    std::string metrics_csv;  // optional per-epoch CSV
};

struct EpochStats {
    int epoch = 0;
    double loss = 0;
    double accuracy = 0;  // evaluated over the training set at epoch end
    double lr = 0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    bool diverged = false;
    double final_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().accuracy; }
};

template <typename T>
double evaluate_accuracy(const ModelConfig& cfg, const ModelParams<T>& params,
                         const Dataset& data) {
    std::size_t hits = 0;
    std::vector<int> pred(data.count);
    parallel_for(data.count, [&](std::size_t i) {
        Tensor<T> logits = secvit_forward_value(data.image<T>(i), cfg, params);
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.size(); ++k)
            if (logits[k] > logits[best]) best = k;
        pred[i] = int(best);
    });
    for (std::size_t i = 0; i < data.count; ++i)
        if (pred[i] == data.labels[i]) ++hits;
    return double(hits) / double(data.count);
}

// Per-sample tape passes with gradients accumulated over the batch, AdamW
// with cosine decay per step. Samples may fan out across worker threads;
// their gradients are merged in a fixed order, so a given thread count is
// reproducible and one thread is bitwise deterministic.
template <typename T>
TrainResult train_model(const ModelConfig& cfg, ModelParams<T>& params, const Dataset& data,
                        const TrainOptions& opt) {
    cfg.validate();
    data.validate();
    if (data.count == 0) throw std::invalid_argument("train: empty dataset");

    std::vector<Tensor<T>*> plist;
    visit_params(params, [&](const std::string&, Tensor<T>& t) { plist.push_back(&t); });

    AdamW<T> adamw;
    adamw.weight_decay = opt.weight_decay;

    std::size_t batches_per_epoch = (data.count + opt.batch_size - 1) / opt.batch_size;
    std::uint64_t total_steps = std::uint64_t(opt.epochs) * batches_per_epoch;

    std::ofstream csv;
    if (!opt.metrics_csv.empty()) {
        csv.open(opt.metrics_csv);
        csv << "epoch,loss,train_acc,lr\n";
    }

    TrainResult result;
    std::uint64_t step = 0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        Rng order_rng(opt.seed * 7919 + std::uint64_t(epoch));
        std::vector<std::uint32_t> order = order_rng.permutation(data.count);

        double loss_sum = 0;
        bool blew_up = false;
        for (std::size_t b0 = 0; b0 < data.count && !blew_up; b0 += opt.batch_size) {
            std::size_t bsz = std::min(opt.batch_size, data.count - b0);

            std::vector<Tensor<T>> batch_grads(plist.size());
            for (std::size_t i = 0; i < plist.size(); ++i)
                batch_grads[i] = Tensor<T>(plist[i]->shape());
            std::vector<double> sample_loss(bsz, 0.0);

            int nthreads = std::max(1, std::min<int>(threads(), int(bsz)));
            std::size_t chunk = (bsz + nthreads - 1) / nthreads;
            std::vector<std::vector<Tensor<T>>> worker_grads(nthreads);
            std::vector<bool> worker_fail(nthreads, false);

            parallel_for(std::size_t(nthreads), [&](std::size_t w) {
                std::size_t lo = w * chunk, hi = std::min(bsz, lo + chunk);
                if (lo >= hi) return;
                auto& grads = worker_grads[w];
                grads.resize(plist.size());
                for (std::size_t i = 0; i < plist.size(); ++i)
                    grads[i] = Tensor<T>(plist[i]->shape());
                for (std::size_t s = lo; s < hi; ++s) {
                    std::size_t sample = order[b0 + s];
                    try {
                        Tape<T> tape;
                        ModelVars<T> vars = lift(tape, params);
                        Var<T> logits =
                            secvit_forward(tape, tape.constant(data.image<T>(sample)), cfg, vars);
                        Var<T> rows = reshape(logits, {std::size_t(1), data.num_classes});
                        Var<T> loss =
                            cross_entropy_logits(rows, std::vector<int>{data.labels[sample]});
                        sample_loss[s] = double(tape.value(loss)[0]);
                        tape.backward(loss);
                        std::size_t pi = 0;
                        visit_params(vars, [&](const std::string&, Var<T>& v) {
                            const Tensor<T>& g = tape.grad(v);
                            Tensor<T>& acc = grads[pi++];
                            for (std::size_t j = 0; j < acc.size(); ++j)
                                acc[j] += g[j] / T(bsz);
                        });
                    } catch (const std::runtime_error&) {
                        worker_fail[w] = true;  // non-finite activation: divergence
                        return;
                    }
                }
            });

            for (int w = 0; w < nthreads; ++w) {
                if (worker_fail[w]) blew_up = true;
                if (worker_grads[w].empty()) continue;
                for (std::size_t i = 0; i < plist.size(); ++i)
                    for (std::size_t j = 0; j < batch_grads[i].size(); ++j)
                        batch_grads[i][j] += worker_grads[w][i][j];
            }
            for (double l : sample_loss) loss_sum += l;
            if (blew_up || !std::isfinite(loss_sum)) {
                result.diverged = true;
                return result;
            }

            double lr_t = cosine_lr(opt.lr, step, total_steps);
            adamw.step(plist, batch_grads, lr_t);
            ++step;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = loss_sum / double(data.count);
        stats.accuracy = evaluate_accuracy(cfg, params, data);
        stats.lr = cosine_lr(opt.lr, step, total_steps);
        result.epochs.push_back(stats);
        if (opt.log)
            (*opt.log) << "epoch " << epoch << "  loss " << stats.loss << "  train_acc "
                       << stats.accuracy << "  lr " << stats.lr << "\n";
        if (csv.is_open())
            csv << epoch << ',' << stats.loss << ',' << stats.accuracy << ',' << stats.lr << '\n';
        if (opt.target_accuracy > 0 && stats.accuracy >= opt.target_accuracy) break;
    }
    return result;
}

}  // namespace secvit
