#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"
#include "vbg/annotate.hpp"
#include "vbg/checkpoint.hpp"
#include "vbg/eval.hpp"
#include "vbg/gradcheck.hpp"
#include "vbg/synthetic.hpp"
#include "vbg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Prevents two concurrent runs from clobbering one checkpoint directory.
struct DirLock {
    fs::path path;
    explicit DirLock(const fs::path& dir) : path(dir / ".lock") {
        fs::create_directories(dir);
        if (fs::exists(path))
            throw vbg::ValidationError("output dir is locked by another run: " + path.string() +
                                       " (remove the stale .lock if no run is active)");
        std::ofstream f(path);
        f << "pid " << ::getpid() << '\n';
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path, ec);
    }
};

void write_json_atomic(const json& j, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << j.dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

std::map<std::string, const vbg::Document*> index_by_id(const std::vector<vbg::Document>& docs) {
    std::map<std::string, const vbg::Document*> by_id;
    for (const vbg::Document& d : docs) by_id[d.id] = &d;
    return by_id;
}

const vbg::Document& gold_for(const std::map<std::string, const vbg::Document*>& by_id,
                              const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw vbg::ValidationError("no gold document with id " + id);
    return *it->second;
}

// ---- generate ----

struct GenerateArgs {
    std::string out;
    int count = 10;
    vbg::SyntheticSpec spec;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
    CLI::App* cmd = app.add_subcommand("generate", "Write a synthetic labeled dataset");
    cmd->add_option("--out", a.out, "Output dataset directory")->required();
    cmd->add_option("--count", a.count, "Number of documents")->required();
    cmd->add_option("--seed", a.spec.seed, "RNG seed (default 0)");
    cmd->add_option("--layout", a.spec.layout, "free_text | tabular");
    cmd->add_option("--labels", a.spec.labels, "Field label names")->delimiter(',');
    cmd->add_option("--min-width", a.spec.min_width, "Minimum page width");
    cmd->add_option("--max-width", a.spec.max_width, "Maximum page width");
    cmd->add_option("--min-height", a.spec.min_height, "Minimum page height");
    cmd->add_option("--max-height", a.spec.max_height, "Maximum page height");
    cmd->add_option("--min-filler", a.spec.min_filler_words, "Minimum filler words");
    cmd->add_option("--max-filler", a.spec.max_filler_words, "Maximum filler words");
    cmd->add_option("--jitter", a.spec.bbox_jitter, "Bounding-box jitter in pixels");
    cmd->add_option("--font-height", a.spec.font_height, "Word box height");
    cmd->add_option("--char-width", a.spec.char_width, "Word box width per character");
    cmd->callback([&a] {
        std::vector<vbg::Document> docs = vbg::generate_synthetic(a.spec, a.count);
        vbg::write_dataset(docs, a.spec.label_set(), a.out);
        std::cout << "wrote " << docs.size() << " documents to " << a.out << '\n';
    });
}

// ---- annotate ----

struct AnnotateArgs {
    std::string data, out;
    vbg::MatchOptions opts;
};

void add_annotate(CLI::App& app, AnnotateArgs& a) {
    CLI::App* cmd = app.add_subcommand(
        "annotate", "Project field texts onto word-level labels and report every match");
    cmd->add_option("--data", a.data, "Dataset directory (documents with field annotations)")
        ->required();
    cmd->add_option("--out", a.out, "Output directory for annotated documents")->required();
    cmd->add_flag("--lowercase,!--no-lowercase", a.opts.lowercase, "Case-insensitive matching");
    cmd->add_flag("--strip-punct,!--no-strip-punct", a.opts.strip_punct,
                  "Strip leading/trailing punctuation");
    cmd->add_flag("--collapse-ws,!--no-collapse-ws", a.opts.collapse_whitespace,
                  "Collapse whitespace runs");
    cmd->add_flag("--fuzzy,!--no-fuzzy", a.opts.edit_distance_fallback,
                  "Edit-distance fallback matching");
    cmd->callback([&a] {
        vbg::LabelSet labels;
        std::vector<vbg::Document> docs = vbg::load_dataset(a.data, labels);
        fs::create_directories(a.out);
        json report = json::array();
        int matched = 0, total = 0;
        for (vbg::Document& doc : docs) {
            vbg::MatchResult res = vbg::match_field_annotations(doc, doc.fields, labels, a.opts);
            for (std::size_t i = 0; i < doc.words.size(); ++i)
                doc.words[i].label = res.word_labels[i];
            for (const vbg::FieldMatch& m : res.report) {
                report.push_back({{"doc", doc.id},
                                  {"field_index", m.field_index},
                                  {"label", labels.name_of(m.label)},
                                  {"status", m.status},
                                  {"word_indices", m.matched_word_indices},
                                  {"note", m.note}});
                ++total;
                if (m.status != "unmatched") ++matched;
            }
            vbg::save_document(doc, labels, (fs::path(a.out) / (doc.id + ".json")).string(),
                               doc.id + ".pgm");
        }
        {
            const std::string tmp = (fs::path(a.out) / "labels.txt.tmp").string();
            std::ofstream out(tmp);
            for (const std::string& n : labels.names) out << n << '\n';
            fs::rename(tmp, fs::path(a.out) / "labels.txt");
        }
        write_json_atomic(report, (fs::path(a.out) / "match_report.json").string());
        std::cout << "matched " << matched << "/" << total << " fields; report in "
                  << (fs::path(a.out) / "match_report.json").string() << '\n';
    });
}

// ---- train ----

struct TrainArgs {
    std::string data, val, out, config_path, resume, head;
    double val_fraction = 0.0;
    std::vector<std::string> overrides;
    int epochs = -1;
    long long seed = -1;
};

void add_train(CLI::App& app, TrainArgs& a) {
    CLI::App* cmd = app.add_subcommand("train", "Train a model on a dataset directory");
    cmd->add_option("--data", a.data, "Training dataset directory")->required();
    cmd->add_option("--out", a.out, "Output directory (checkpoints + metrics.jsonl)")->required();
    cmd->add_option("--val", a.val, "Validation dataset directory");
    cmd->add_option("--val-fraction", a.val_fraction,
                    "Hold out this tail fraction of --data as validation");
    cmd->add_option("--config", a.config_path, "JSON config file");
    cmd->add_option("--set", a.overrides, "Override a config key, e.g. --set optim.cnn_lr=0.001")
        ->take_all();
    cmd->add_option("--head", a.head, "Shortcut for model.head_kind (linear | bilstm_crf)");
    cmd->add_option("--epochs", a.epochs, "Shortcut for the epochs key");
    cmd->add_option("--seed", a.seed, "Shortcut for the seed key");
    cmd->add_option("--resume", a.resume, "Resume from a checkpoint");
    std::string keys = "Config keys and defaults:\n";
    for (const std::string& line : vbg::config_key_docs()) keys += "  " + line + "\n";
    cmd->footer(keys);
    cmd->callback([&a] {
        json j = json::object();
        if (!a.config_path.empty()) {
            std::ifstream in(a.config_path);
            if (!in) throw vbg::ParseError("cannot open config: " + a.config_path);
            in >> j;
        }
        for (const std::string& kv : a.overrides) {
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw vbg::ValidationError("--set expects key=value, got: " + kv);
            vbg::apply_override(j, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!a.head.empty()) vbg::apply_override(j, "model.head_kind", a.head);
        if (a.epochs >= 0) vbg::apply_override(j, "epochs", std::to_string(a.epochs));
        if (a.seed >= 0) vbg::apply_override(j, "seed", std::to_string(a.seed));
        vbg::TrainConfig cfg = vbg::train_config_from_json(j);

        vbg::LabelSet labels;
        std::vector<vbg::Document> train_docs = vbg::load_dataset(a.data, labels);
        std::vector<vbg::Document> val_docs;
        if (!a.val.empty()) {
            vbg::LabelSet val_labels;
            val_docs = vbg::load_dataset(a.val, val_labels);
            if (val_labels.names != labels.names)
                throw vbg::ValidationError("--val label set differs from --data");
        } else if (a.val_fraction > 0.0) {
            const std::size_t keep = train_docs.size() -
                                     static_cast<std::size_t>(a.val_fraction *
                                                              static_cast<double>(train_docs.size()));
            val_docs.assign(train_docs.begin() + static_cast<std::ptrdiff_t>(keep),
                            train_docs.end());
            train_docs.resize(keep);
        }

        DirLock lock(a.out);
        vbg::TrainOptions opts;
        opts.out_dir = a.out;
        opts.resume_from = a.resume;
        opts.log = [](const std::string& msg) { std::cerr << msg << '\n'; };
        vbg::TrainResult res = vbg::train(cfg, train_docs, val_docs, labels, opts);
        if (res.aborted) throw std::runtime_error("training aborted: " + res.abort_reason);
        std::cout << "trained " << res.epochs_run << " epoch(s); best val micro-F1 "
                  << res.best_val_f1 << "; checkpoint " << res.best_checkpoint << '\n';
    });
}

// ---- predict ----

struct PredictArgs {
    std::string checkpoint, data, out, rules;
    int short_side = 0;
};

void add_predict(CLI::App& app, PredictArgs& a) {
    CLI::App* cmd = app.add_subcommand("predict", "Label a dataset with a trained checkpoint");
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    cmd->add_option("--data", a.data, "Dataset directory")->required();
    cmd->add_option("--out", a.out, "Predictions JSON file")->required();
    cmd->add_option("--rules", a.rules, "Post-processing rule pack (JSON)");
    cmd->add_option("--short-side", a.short_side,
                    "Eval resize short side (default: from checkpoint config)");
    cmd->callback([&a] {
        vbg::LoadedCheckpoint ck = vbg::load_checkpoint(a.checkpoint);
        vbg::Model& model = *ck.model;
        vbg::LabelSet labels;
        std::vector<vbg::Document> docs = vbg::load_dataset(a.data, labels);
        if (labels.names != model.labels().names)
            throw vbg::ValidationError("dataset label set differs from the checkpoint");
        std::vector<vbg::PostprocessRule> rules;
        if (!a.rules.empty()) rules = vbg::load_rule_pack(a.rules, labels);
        const int side = a.short_side > 0 ? a.short_side : ck.config.eval_short_side;

        std::vector<vbg::PredictionRecord> records;
        for (const vbg::Document& raw : docs) {
            vbg::Document doc = vbg::rescale_document(raw, side, ck.config.max_long_side);
            vbg::PredictionRecord rec;
            rec.id = doc.id;
            rec.word_labels = model.predict(doc);
            for (const vbg::Word& w : doc.words) rec.word_texts.push_back(w.text);
            rec.entities = vbg::extract_entities(rec.word_labels, doc, labels);
            if (!rules.empty()) rec.entities = vbg::postprocess(rec.entities, rules, doc);
            records.push_back(std::move(rec));
        }
        vbg::write_predictions(records, labels, a.out);
        std::cout << "wrote predictions for " << records.size() << " documents to " << a.out
                  << '\n';
    });
}

// ---- evaluate ----

struct EvaluateArgs {
    std::string pred, data, out;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
    CLI::App* cmd = app.add_subcommand("evaluate", "Score predictions against a gold dataset");
    cmd->add_option("--pred", a.pred, "Predictions JSON file")->required();
    cmd->add_option("--data", a.data, "Gold dataset directory")->required();
    cmd->add_option("--out", a.out, "Write the metrics report here");
    cmd->callback([&a] {
        vbg::LabelSet labels;
        std::vector<vbg::Document> gold_docs = vbg::load_dataset(a.data, labels);
        auto by_id = index_by_id(gold_docs);
        std::vector<vbg::PredictionRecord> records = vbg::read_predictions(a.pred, labels);

        std::vector<std::vector<vbg::FieldPrediction>> pred, gold;
        std::vector<std::vector<vbg::FieldAnnotation>> gold_fields;
        for (const vbg::PredictionRecord& rec : records) {
            const vbg::Document& g = gold_for(by_id, rec.id);
            if (g.words.size() != rec.word_labels.size())
                throw vbg::ValidationError("word count mismatch for document " + rec.id);
            std::vector<int> gl;
            for (const vbg::Word& w : g.words) gl.push_back(w.label);
            pred.push_back(rec.entities);
            gold.push_back(vbg::extract_entities(gl, g, labels));
            gold_fields.push_back(g.fields);
        }
        vbg::F1Report rep = vbg::field_f1(pred, gold, labels);
        const double sroie = vbg::sroie_macro_f1(pred, gold_fields, labels);

        json out = {{"micro_f1", rep.micro_f1},
                    {"macro_f1", rep.macro_f1},
                    {"micro_precision", rep.micro_precision},
                    {"micro_recall", rep.micro_recall},
                    {"sroie_macro_f1", sroie},
                    {"per_label", json::object()}};
        for (const auto& [name, s] : rep.per_label)
            out["per_label"][name] = {{"precision", s.precision}, {"recall", s.recall},
                                      {"f1", s.f1},             {"tp", s.tp},
                                      {"fp", s.fp},             {"fn", s.fn}};
        if (!a.out.empty()) write_json_atomic(out, a.out);
        std::cout << "micro_f1 " << rep.micro_f1 << "  macro_f1 " << rep.macro_f1
                  << "  sroie_macro_f1 " << sroie << '\n';
    });
}

// ---- compare ----

struct CompareArgs {
    std::string pred_a, pred_b, data, out;
    double alpha = 0.05;
};

void add_compare(CLI::App& app, CompareArgs& a) {
    CLI::App* cmd =
        app.add_subcommand("compare", "McNemar's test between two prediction sets (per word)");
    cmd->add_option("--pred-a", a.pred_a, "First predictions file")->required();
    cmd->add_option("--pred-b", a.pred_b, "Second predictions file")->required();
    cmd->add_option("--data", a.data, "Gold dataset directory")->required();
    cmd->add_option("--out", a.out, "Write the report here");
    cmd->add_option("--alpha", a.alpha, "Significance level");
    cmd->callback([&a] {
        vbg::LabelSet labels;
        std::vector<vbg::Document> gold_docs = vbg::load_dataset(a.data, labels);
        auto by_id = index_by_id(gold_docs);
        auto correctness = [&](const std::string& path) {
            std::vector<bool> correct;
            for (const vbg::PredictionRecord& rec : vbg::read_predictions(path, labels)) {
                const vbg::Document& g = gold_for(by_id, rec.id);
                if (g.words.size() != rec.word_labels.size())
                    throw vbg::ValidationError("word count mismatch for document " + rec.id);
                for (std::size_t i = 0; i < g.words.size(); ++i)
                    correct.push_back(rec.word_labels[i] == g.words[i].label);
            }
            return correct;
        };
        std::vector<bool> ca = correctness(a.pred_a), cb = correctness(a.pred_b);
        if (ca.size() != cb.size())
            throw vbg::ValidationError("prediction sets cover different word counts");
        vbg::McNemarReport rep = vbg::mcnemar(ca, cb);
        json out = {{"b", rep.b},
                    {"c", rep.c},
                    {"both_right", rep.both_right},
                    {"both_wrong", rep.both_wrong},
                    {"p", rep.p},
                    {"alpha", a.alpha},
                    {"significant", rep.p < a.alpha}};
        if (!a.out.empty()) write_json_atomic(out, a.out);
        std::cout << "b " << rep.b << "  c " << rep.c << "  p " << rep.p
                  << (rep.p < a.alpha ? "  (significant)" : "  (not significant)") << '\n';
    });
}

// ---- gradcheck ----

void add_gradcheck(CLI::App& app, unsigned long long& seed, bool& failed) {
    CLI::App* cmd = app.add_subcommand("gradcheck", "Run the finite-difference gradient suites");
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->callback([&seed, &failed] {
        for (const vbg::GradCheckResult& r : vbg::run_gradient_suite(seed)) {
            std::cout << (r.pass ? "pass" : "FAIL") << "  " << r.name << "  max_rel_err "
                      << r.max_rel_err << '\n';
            if (!r.pass) failed = true;
        }
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ViBERTgrid BiLSTM-CRF key information extraction"};
    app.require_subcommand(1);

    GenerateArgs gen;
    AnnotateArgs ann;
    TrainArgs tr;
    PredictArgs pr;
    EvaluateArgs ev;
    CompareArgs cmp;
    unsigned long long gradcheck_seed = 0;
    bool gradcheck_failed = false;

    add_generate(app, gen);
    add_annotate(app, ann);
    add_train(app, tr);
    add_predict(app, pr);
    add_evaluate(app, ev);
    add_compare(app, cmp);
    add_gradcheck(app, gradcheck_seed, gradcheck_failed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);  // 0 for --help, nonzero for usage errors
    } catch (const vbg::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const vbg::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return 2;
    }
    return gradcheck_failed ? 1 : 0;
}
