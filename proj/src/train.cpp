#include "vbg/train.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vbg/eval.hpp"

namespace vbg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void info(const TrainOptions& opts, const std::string& msg) {
    if (opts.log) opts.log(msg);
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw ParseError("cannot restore RNG state");
}

std::vector<std::string> collect_corpus(const std::vector<Document>& docs) {
    std::vector<std::string> words;
    for (const Document& d : docs)
        for (const Word& w : d.words) words.push_back(w.text);
    return words;
}

}  // namespace

double dataset_micro_f1(Model& model, const std::vector<Document>& docs, int eval_short_side,
                        int max_long_side) {
    std::vector<std::vector<FieldPrediction>> pred, gold;
    for (const Document& d : docs) {
        Document scaled = rescale_document(d, eval_short_side, max_long_side);
        std::vector<int> labels_pred = model.predict(scaled);
        std::vector<int> labels_gold;
        for (const Word& w : scaled.words) labels_gold.push_back(w.label);
        pred.push_back(extract_entities(labels_pred, scaled, model.labels()));
        gold.push_back(extract_entities(labels_gold, scaled, model.labels()));
    }
    return field_f1(pred, gold, model.labels()).micro_f1;
}

TrainResult train(const TrainConfig& cfg, const std::vector<Document>& train_docs,
                  const std::vector<Document>& val_docs, const LabelSet& labels,
                  const TrainOptions& opts) {
    cfg.validate();
    if (train_docs.empty()) throw ValidationError("train: empty training set");
    fs::create_directories(opts.out_dir);

    TrainResult result;
    std::mt19937_64 rng(cfg.seed);
    std::unique_ptr<Model> model;
    AdamW opt(cfg.optim);
    PlateauScheduler sched;
    sched.patience = cfg.plateau_patience;
    sched.factor = cfg.plateau_factor;
    long long step = 0;
    int start_epoch = 0;

    if (!opts.resume_from.empty()) {
        LoadedCheckpoint ck = load_checkpoint(opts.resume_from);
        model = std::move(ck.model);
        opt = ck.make_optimizer();
        sched = ck.state.schedule;
        sched.patience = cfg.plateau_patience;
        sched.factor = cfg.plateau_factor;
        step = ck.state.step;
        start_epoch = ck.state.epoch + 1;
        result.best_val_f1 = ck.state.best_val_f1;
        rng_from_string(rng, ck.state.rng_state);
        info(opts, "resumed from " + opts.resume_from + " at epoch " +
                       std::to_string(start_epoch));
    } else {
        Vocabulary vocab = Vocabulary::build(collect_corpus(train_docs), cfg.max_vocab_pieces);
        model = std::make_unique<Model>(cfg.model, labels, std::move(vocab));
        model->init(rng);
        std::vector<double> label_priors, coarse_priors;
        compute_priors(train_docs, labels, 4, label_priors, coarse_priors);
        model->set_priors(label_priors, coarse_priors);
    }

    const std::string metrics_path = (fs::path(opts.out_dir) / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path,
                          opts.resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!metrics) throw std::runtime_error("cannot write " + metrics_path);

    auto save = [&](const std::string& name, int epoch) {
        TrainState st;
        st.epoch = epoch;
        st.step = step;
        st.rng_state = rng_to_string(rng);
        st.schedule = sched;
        st.best_val_f1 = result.best_val_f1;
        const std::string path = (fs::path(opts.out_dir) / name).string();
        save_checkpoint(path, *model, cfg, st, &opt);
        return path;
    };

    std::vector<std::size_t> order(train_docs.size());
    int consecutive_bad = 0;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // restart from the identity permutation so the epoch's order depends
        // only on the RNG state, which a resumed run restores exactly
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_word = 0, epoch_aux = 0;
        long long epoch_docs = 0;

        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const int scale =
                cfg.train_scales[std::uniform_int_distribution<std::size_t>(
                    0, cfg.train_scales.size() - 1)(rng)];
            std::map<std::string, Tensor> grads;
            int batch_docs = 0;
            double batch_word = 0, batch_aux = 0;
            bool bad = false;
            const std::size_t end =
                std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            for (std::size_t i = b; i < end; ++i) {
                const Document& raw = train_docs[order[i]];
                if (raw.words.empty()) {
                    info(opts, "skipping empty document " + raw.id);
                    continue;
                }
                Document doc = rescale_document(raw, scale, cfg.max_long_side);
                ParamContext ctx(model->params());
                auto res = model->forward_loss(doc, ctx, rng, /*training=*/true);
                const double total = res.total->value[0];
                if (!std::isfinite(total)) {
                    info(opts, "non-finite loss on " + raw.id + "; skipping step");
                    bad = true;
                    break;
                }
                backward(res.total);
                for (const auto& [name, var] : ctx.used()) {
                    Tensor g = ctx.grad_of(name);
                    if (g.empty()) continue;
                    auto [it, inserted] = grads.try_emplace(name, std::move(g));
                    if (!inserted) it->second.add_(ctx.grad_of(name));
                }
                batch_word += res.loss_word->value[0];
                batch_aux += res.loss_aux->value[0];
                ++batch_docs;
            }
            if (!bad && batch_docs > 0) {
                for (auto& [name, g] : grads) g.scale_(1.0 / batch_docs);
                AdamW::StepResult sr = opt.step(model->params(), grads);
                if (!sr.applied) {
                    info(opts, "non-finite gradient in " + sr.bad_param + "; step skipped");
                    bad = true;
                }
            }
            if (bad) {
                if (++consecutive_bad >= cfg.nonfinite_abort_after) {
                    result.aborted = true;
                    result.abort_reason = std::to_string(consecutive_bad) +
                                          " consecutive non-finite steps";
                    info(opts, "aborting: " + result.abort_reason);
                    return result;
                }
                continue;
            }
            if (batch_docs == 0) continue;
            consecutive_bad = 0;
            ++step;
            epoch_word += batch_word;
            epoch_aux += batch_aux;
            epoch_docs += batch_docs;
        }

        const double mean_word = epoch_docs ? epoch_word / static_cast<double>(epoch_docs) : 0.0;
        const double mean_aux = epoch_docs ? epoch_aux / static_cast<double>(epoch_docs) : 0.0;
        double val_f1 = 0.0;
        if (!val_docs.empty())
            val_f1 = dataset_micro_f1(*model, val_docs, cfg.eval_short_side, cfg.max_long_side);

        metrics << json{{"epoch", epoch},
                        {"step", step},
                        {"loss_word", mean_word},
                        {"loss_aux", mean_aux},
                        {"lr_encoder", opt.encoder_lr()},
                        {"lr_cnn", opt.cnn_lr()},
                        {"val_micro_f1", val_f1}}
                       .dump()
                << '\n'
                << std::flush;

        if (!val_docs.empty() && val_f1 > result.best_val_f1) {
            result.best_val_f1 = val_f1;
            result.best_checkpoint = save("best.ckpt", epoch);
        }
        if (!val_docs.empty() && sched.update(epoch, val_f1)) {
            opt.set_lr_multiplier(sched.multiplier);
            info(opts, "plateau decay at epoch " + std::to_string(epoch) + ", lr multiplier " +
                           std::to_string(sched.multiplier));
        }
        result.last_checkpoint = save("last.ckpt", epoch);
        result.epochs_run = epoch - start_epoch + 1;
    }
    if (result.best_checkpoint.empty()) result.best_checkpoint = result.last_checkpoint;
    return result;
}

}  // namespace vbg
