#include "vbg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace vbg {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'V', 'B', 'G', 'C', 'K', 'P', 'T', '1'};

// Raw f64 payloads are written in host order; the format is little-endian.
static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

json tensor_table(const std::map<std::string, Tensor>& tensors, const std::string& kind,
                  std::uint64_t& offset) {
    json table = json::array();
    for (const auto& [name, t] : tensors) {
        table.push_back({{"name", name},
                         {"kind", kind},
                         {"shape", t.shape()},
                         {"dtype", "f64"},
                         {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.numel()) * sizeof(double);
    }
    return table;
}

void write_payload(std::ostream& out, const std::map<std::string, Tensor>& tensors) {
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel()) * sizeof(double));
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                     const TrainState& state, const AdamW* optim) {
    json header;
    header["config"] = to_json(cfg);
    header["labels"] = model.labels().names;
    header["vocab"] = model.vocab().pieces();
    header["label_priors"] = model.label_priors();
    header["coarse_priors"] = model.coarse_priors();
    header["state"] = {{"epoch", state.epoch},
                       {"step", state.step},
                       {"rng", state.rng_state},
                       {"best_val_f1", state.best_val_f1},
                       {"schedule",
                        {{"best_score", state.schedule.best_score},
                         {"best_epoch", state.schedule.best_epoch},
                         {"last_decay_epoch", state.schedule.last_decay_epoch},
                         {"multiplier", state.schedule.multiplier}}}};

    std::uint64_t offset = 0;
    json table = tensor_table(model.params().all(), "param", offset);
    AdamW* opt = const_cast<AdamW*>(optim);
    if (opt) {
        for (const json& row : tensor_table(opt->moments_m(), "adam_m", offset))
            table.push_back(row);
        for (const json& row : tensor_table(opt->moments_v(), "adam_v", offset))
            table.push_back(row);
        header["adam_step_count"] = opt->step_count();
    }
    header["tensors"] = std::move(table);

    const std::string dump = header.dump();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + tmp);
        out.write(kMagic, sizeof kMagic);
        write_u64(out, dump.size());
        out.write(dump.data(), static_cast<std::streamsize>(dump.size()));
        write_payload(out, model.params().all());
        if (opt) {
            write_payload(out, opt->moments_m());
            write_payload(out, opt->moments_v());
        }
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::rename(tmp.c_str(), path.c_str());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw ParseError("not a checkpoint file: " + path);
    const std::uint64_t header_len = read_u64(in);
    std::string dump(header_len, '\0');
    in.read(dump.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw ParseError("truncated checkpoint header: " + path);
    json header;
    try {
        header = json::parse(dump);
    } catch (const json::exception& e) {
        throw ParseError("checkpoint header " + path + ": " + e.what());
    }

    LoadedCheckpoint ck;
    ck.config = train_config_from_json(header.at("config"));
    LabelSet labels;
    labels.names = header.at("labels").get<std::vector<std::string>>();
    Vocabulary vocab(header.at("vocab").get<std::vector<std::string>>());
    ck.model = std::make_unique<Model>(ck.config.model, labels, std::move(vocab));
    {
        // register canonical shapes so the stored table can be verified
        std::mt19937_64 scratch(0);
        ck.model->init(scratch);
    }
    ck.model->set_priors(header.at("label_priors").get<std::vector<double>>(),
                         header.at("coarse_priors").get<std::vector<double>>());

    const json& st = header.at("state");
    ck.state.epoch = st.at("epoch").get<int>();
    ck.state.step = st.at("step").get<long long>();
    ck.state.rng_state = st.at("rng").get<std::string>();
    ck.state.best_val_f1 = st.at("best_val_f1").get<double>();
    const json& sch = st.at("schedule");
    ck.state.schedule.best_score = sch.at("best_score").get<double>();
    ck.state.schedule.best_epoch = sch.at("best_epoch").get<int>();
    ck.state.schedule.last_decay_epoch = sch.at("last_decay_epoch").get<int>();
    ck.state.schedule.multiplier = sch.at("multiplier").get<double>();
    ck.adam_step_count = header.value("adam_step_count", 0LL);

    const std::streampos data_start = in.tellg();
    for (const json& row : header.at("tensors")) {
        const std::string name = row.at("name").get<std::string>();
        const std::string kind = row.at("kind").get<std::string>();
        const std::vector<int> shape = row.at("shape").get<std::vector<int>>();
        if (row.at("dtype").get<std::string>() != "f64")
            throw ParseError("checkpoint " + path + ": unsupported dtype for " + name);
        Tensor t(shape);
        in.seekg(data_start + static_cast<std::streamoff>(row.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel()) * sizeof(double));
        if (!in) throw ParseError("truncated checkpoint data: " + path + " at " + name);
        if (kind == "param") {
            if (!ck.model->params().has(name))
                throw ParseError("checkpoint " + path + ": unknown parameter " + name);
            Tensor& dst = ck.model->params().at(name);
            if (dst.shape() != t.shape())
                throw ParseError("checkpoint " + path + ": shape mismatch for " + name);
            dst = std::move(t);
        } else if (kind == "adam_m") {
            ck.adam_m[name] = std::move(t);
        } else if (kind == "adam_v") {
            ck.adam_v[name] = std::move(t);
        } else {
            throw ParseError("checkpoint " + path + ": unknown tensor kind " + kind);
        }
    }
    return ck;
}

AdamW LoadedCheckpoint::make_optimizer() const {
    AdamW opt(config.optim);
    opt.moments_m() = adam_m;
    opt.moments_v() = adam_v;
    opt.set_step_count(adam_step_count);
    opt.set_lr_multiplier(state.schedule.multiplier);
    return opt;
}

}  // namespace vbg
