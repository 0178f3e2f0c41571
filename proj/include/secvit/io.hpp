#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "secvit/cluster.hpp"
#include "secvit/data.hpp"
#include "secvit/model.hpp"
#include "secvit/tensor.hpp"

namespace secvit {

// ---- SECV checkpoint container -------------------------------------------------
//
//   magic   "SECV"
//   version u32 LE (currently 1)
//   count   u64 LE
//   entry   name_len u32 LE | name bytes | dtype u8 | rank u32 LE
//           | dims u64 LE each | payload LE row-major
//
// dtype tags: 1 = f32, 2 = f64, 3 = u32. Unknown tags, duplicate names,
// version mismatches and truncation are all hard errors.

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u32 = 3 };

inline std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::u32: return 4;
    }
    throw std::invalid_argument("checkpoint: unknown dtype tag");
}

class Checkpoint {
public:
    struct Entry {
        std::string name;
        DType dtype;
        Shape dims;
        std::vector<std::uint8_t> payload;  // little-endian row-major
    };

    static constexpr std::uint32_t kVersion = 1;

    const std::vector<Entry>& entries() const { return entries_; }
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    void put_f32(const std::string& name, const Tensor<float>& t) {
        add(name, DType::f32, t.shape(), t.data(), t.size());
    }
    void put_f64(const std::string& name, const Tensor<double>& t) {
        add(name, DType::f64, t.shape(), t.data(), t.size());
    }
    void put_u32(const std::string& name, const std::vector<std::uint32_t>& v, Shape dims) {
        if (numel(dims) != v.size())
            throw std::invalid_argument("checkpoint: dims do not match payload for " + name);
        add(name, DType::u32, std::move(dims), v.data(), v.size());
    }

    Tensor<float> get_f32(const std::string& name) const { return get_tensor<float>(name, DType::f32); }
    Tensor<double> get_f64(const std::string& name) const { return get_tensor<double>(name, DType::f64); }
    std::vector<std::uint32_t> get_u32(const std::string& name) const {
        const Entry& e = find(name, DType::u32);
        std::vector<std::uint32_t> out(numel(e.dims));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_le32(e.payload.data() + 4 * i);
        return out;
    }
    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("checkpoint: no entry '" + name + "'");
        return entries_[it->second];
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
        f.write("SECV", 4);
        write_le32(f, kVersion);
        write_le64(f, entries_.size());
        for (const Entry& e : entries_) {
            write_le32(f, std::uint32_t(e.name.size()));
            f.write(e.name.data(), std::streamsize(e.name.size()));
            std::uint8_t tag = std::uint8_t(e.dtype);
            f.write(reinterpret_cast<const char*>(&tag), 1);
            write_le32(f, std::uint32_t(e.dims.size()));
            for (std::size_t d : e.dims) write_le64(f, d);
            f.write(reinterpret_cast<const char*>(e.payload.data()),
                    std::streamsize(e.payload.size()));
        }
        if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
        char magic[4];
        f.read(magic, 4);
        if (!f || std::memcmp(magic, "SECV", 4) != 0)
            throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
        std::uint32_t version = read_le32_stream(f);
        if (version != kVersion)
            throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
        std::uint64_t count = read_le64_stream(f);
        Checkpoint ck;
        for (std::uint64_t i = 0; i < count; ++i) {
            Entry e;
            std::uint32_t nlen = read_le32_stream(f);
            e.name.resize(nlen);
            f.read(e.name.data(), nlen);
            std::uint8_t tag = 0;
            f.read(reinterpret_cast<char*>(&tag), 1);
            if (!f) throw std::runtime_error("checkpoint: truncated entry header");
            if (tag != 1 && tag != 2 && tag != 3)
                throw std::runtime_error("checkpoint: unknown dtype tag " + std::to_string(tag));
            e.dtype = DType(tag);
            std::uint32_t rank = read_le32_stream(f);
            e.dims.resize(rank);
            for (std::uint32_t d = 0; d < rank; ++d) e.dims[d] = read_le64_stream(f);
            std::size_t bytes = numel(e.dims) * dtype_size(e.dtype);
            e.payload.resize(bytes);
            f.read(reinterpret_cast<char*>(e.payload.data()), std::streamsize(bytes));
            if (!f) throw std::runtime_error("checkpoint: truncated payload for '" + e.name + "'");
            ck.add_entry(std::move(e));
        }
        return ck;
    }

private:
    template <typename T>
    void add(const std::string& name, DType dt, Shape dims, const T* data, std::size_t n) {
        Entry e;
        e.name = name;
        e.dtype = dt;
        e.dims = std::move(dims);
        e.payload.resize(n * sizeof(T));
        for (std::size_t i = 0; i < n; ++i) {
            // explicit little-endian serialization, independent of host order
            std::uint64_t bits = 0;
            if constexpr (sizeof(T) == 4) {
                std::uint32_t b;
                std::memcpy(&b, &data[i], 4);
                bits = b;
            } else {
                std::memcpy(&bits, &data[i], 8);
            }
            for (std::size_t by = 0; by < sizeof(T); ++by)
                e.payload[i * sizeof(T) + by] = std::uint8_t((bits >> (8 * by)) & 0xFF);
        }
        add_entry(std::move(e));
    }

    template <typename T>
    Tensor<T> get_tensor(const std::string& name, DType want) const {
        const Entry& e = find(name, want);
        Tensor<T> t(e.dims);
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::uint64_t bits = 0;
            for (std::size_t by = 0; by < sizeof(T); ++by)
                bits |= std::uint64_t(e.payload[i * sizeof(T) + by]) << (8 * by);
            if constexpr (sizeof(T) == 4) {
                std::uint32_t b = std::uint32_t(bits);
                std::memcpy(&t[i], &b, 4);
            } else {
                std::memcpy(&t[i], &bits, 8);
            }
        }
        return t;
    }

    const Entry& find(const std::string& name, DType want) const {
        const Entry& e = entry(name);
        if (e.dtype != want)
            throw std::invalid_argument("checkpoint: dtype mismatch for '" + name + "'");
        return e;
    }

    void add_entry(Entry e) {
        if (e.name.empty()) throw std::invalid_argument("checkpoint: empty entry name");
        if (index_.count(e.name))
            throw std::invalid_argument("checkpoint: duplicate entry '" + e.name + "'");
        index_[e.name] = entries_.size();
        entries_.push_back(std::move(e));
    }

    static std::uint32_t read_le32(const std::uint8_t* p) {
        return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
               std::uint32_t(p[3]) << 24;
    }
    static void write_le32(std::ofstream& f, std::uint32_t v) {
        std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16),
                             std::uint8_t(v >> 24)};
        f.write(reinterpret_cast<const char*>(b), 4);
    }
    static void write_le64(std::ofstream& f, std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = std::uint8_t(v >> (8 * i));
        f.write(reinterpret_cast<const char*>(b), 8);
    }
    static std::uint32_t read_le32_stream(std::ifstream& f) {
        std::uint8_t b[4];
        f.read(reinterpret_cast<char*>(b), 4);
        if (!f) throw std::runtime_error("checkpoint: truncated file");
        return read_le32(b);
    }
    static std::uint64_t read_le64_stream(std::ifstream& f) {
        std::uint8_t b[8];
        f.read(reinterpret_cast<char*>(b), 8);
        if (!f) throw std::runtime_error("checkpoint: truncated file");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
        return v;
    }

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// ---- model/plan <-> checkpoint ---------------------------------------------------

template <typename T>
void save_model(const ModelParams<T>& params, const std::string& path) {
    Checkpoint ck;
    visit_params(const_cast<ModelParams<T>&>(params), [&](const std::string& name, Tensor<T>& t) {
        if constexpr (sizeof(T) == 4)
            ck.put_f32(name, t);
        else
            ck.put_f64(name, t);
    });
    ck.save(path);
}

template <typename T>
void load_model(ModelParams<T>& params, const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    visit_params(params, [&](const std::string& name, Tensor<T>& t) {
        Tensor<T> loaded;
        if constexpr (sizeof(T) == 4)
            loaded = ck.get_f32(name);
        else
            loaded = ck.get_f64(name);
        if (!loaded.same_shape(t))
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        t = std::move(loaded);
    });
}

inline void save_plan(const ClusterPlan& plan, const std::string& path) {
    Checkpoint ck;
    Tensor<double> sim(Shape{plan.sim.size()}, std::vector<double>(plan.sim));
    ck.put_f64("sim", sim);
    ck.put_u32("idx", plan.idx, {plan.idx.size()});
    ck.put_u32("meta",
               {std::uint32_t(plan.num_clusters), std::uint32_t(plan.cluster_size),
                std::uint32_t(plan.padded)},
               {3});
    ck.save(path);
}

inline ClusterPlan load_plan(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    ClusterPlan plan;
    Tensor<double> sim = ck.get_f64("sim");
    plan.sim.assign(sim.data(), sim.data() + sim.size());
    plan.idx = ck.get_u32("idx");
    auto meta = ck.get_u32("meta");
    if (meta.size() != 3) throw std::runtime_error("plan: malformed meta entry");
    plan.num_clusters = meta[0];
    plan.cluster_size = meta[1];
    plan.padded = meta[2];
    plan.inv_idx = invert_permutation(plan.idx);
    plan.iterations = 1;
    return plan;
}

// ---- IDX dataset format ----------------------------------------------------------
// Big-endian headers as published: images 0x00000803 with 3 dims, labels
// 0x00000801 with 1 dim, u8 payloads.

namespace detail {

inline std::uint32_t read_be32(std::ifstream& f, const char* what) {
    std::uint8_t b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw std::runtime_error(std::string(what) + ": truncated header");
    return std::uint32_t(b[0]) << 24 | std::uint32_t(b[1]) << 16 | std::uint32_t(b[2]) << 8 |
           std::uint32_t(b[3]);
}

}  // namespace detail

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> bytes;
};

inline IdxImages load_idx_images(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("idx: cannot open '" + path + "'");
    std::uint32_t magic = detail::read_be32(f, "idx images");
    if (magic != 0x00000803)
        throw std::runtime_error("idx: bad image magic in '" + path + "'");
    IdxImages img;
    img.count = detail::read_be32(f, "idx images");
    img.rows = detail::read_be32(f, "idx images");
    img.cols = detail::read_be32(f, "idx images");
    if (img.rows == 0 || img.cols == 0 || img.rows > 1 << 16 || img.cols > 1 << 16 ||
        img.count > 1 << 28)
        throw std::runtime_error("idx: dimension overflow in '" + path + "'");
    std::size_t n = img.count * img.rows * img.cols;
    img.bytes.resize(n);
    f.read(reinterpret_cast<char*>(img.bytes.data()), std::streamsize(n));
    if (std::size_t(f.gcount()) != n)
        throw std::runtime_error("idx: truncated image payload in '" + path + "'");
    return img;
}

inline std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("idx: cannot open '" + path + "'");
    std::uint32_t magic = detail::read_be32(f, "idx labels");
    if (magic != 0x00000801)
        throw std::runtime_error("idx: bad label magic in '" + path + "'");
    std::size_t count = detail::read_be32(f, "idx labels");
    std::vector<std::uint8_t> labels(count);
    f.read(reinterpret_cast<char*>(labels.data()), std::streamsize(count));
    if (std::size_t(f.gcount()) != count)
        throw std::runtime_error("idx: truncated label payload in '" + path + "'");
    return labels;
}

// u8 pixels normalized to [0, 1]
inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                std::size_t num_classes = 10) {
    IdxImages img = load_idx_images(images_path);
    std::vector<std::uint8_t> labels = load_idx_labels(labels_path);
    if (labels.size() != img.count)
        throw std::runtime_error("idx: image/label count mismatch");
    Dataset ds;
    ds.count = img.count;
    ds.channels = 1;
    ds.height = img.rows;
    ds.width = img.cols;
    ds.num_classes = num_classes;
    ds.pixels.resize(img.bytes.size());
    for (std::size_t i = 0; i < img.bytes.size(); ++i) ds.pixels[i] = float(img.bytes[i]) / 255.0f;
    ds.labels.assign(labels.begin(), labels.end());
    ds.validate();
    return ds;
}

// ---- JSON run configuration --------------------------------------------------------
// {"preset": "secvit-t"} or {"model": {...}}, optionally {"train": {...}}.
// Unknown keys anywhere are rejected, with the offending key path named.

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 0.05;
    int epochs = 20;
    std::size_t batch_size = 32;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed,
                           const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + where + it.key() + "'");
}

inline std::vector<std::size_t> size_list(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array()) throw std::invalid_argument("config: '" + where + "' must be an array");
    std::vector<std::size_t> out;
    for (const auto& v : j) {
        if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0)
            throw std::invalid_argument("config: '" + where + "' entries must be positive");
        out.push_back(v.get<std::size_t>());
    }
    return out;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    detail::reject_unknown(j, {"preset", "model", "train"}, "");
    RunConfig rc;

    if (j.contains("preset")) {
        if (j.contains("model"))
            throw std::invalid_argument("config: give either 'preset' or 'model', not both");
        rc.model = preset_config(j.at("preset").get<std::string>());
    } else if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m,
                               {"name", "stage_depths", "stage_channels", "stage_heads",
                                "stage_clusters", "num_classes", "in_channels", "stem_hidden",
                                "ffn_ratio", "norm_eps"},
                               "model.");
        ModelConfig& c = rc.model;
        c.name = m.value("name", std::string("custom"));
        for (const char* key : {"stage_depths", "stage_channels", "stage_heads"})
            if (!m.contains(key))
                throw std::invalid_argument("config: missing key 'model." + std::string(key) + "'");
        c.stage_depths = detail::size_list(m.at("stage_depths"), "model.stage_depths");
        c.stage_channels = detail::size_list(m.at("stage_channels"), "model.stage_channels");
        c.stage_heads = detail::size_list(m.at("stage_heads"), "model.stage_heads");
        if (m.contains("stage_clusters"))
            c.stage_clusters = detail::size_list(m.at("stage_clusters"), "model.stage_clusters");
        else {
            // default cluster schedule, truncated to the stage count
            std::vector<std::size_t> defaults = {32, 8, 2, 1};
            defaults.resize(c.stage_depths.size());
            c.stage_clusters = defaults;
        }
        if (!m.contains("num_classes"))
            throw std::invalid_argument("config: missing key 'model.num_classes'");
        c.num_classes = m.at("num_classes").get<std::size_t>();
        c.in_channels = m.value("in_channels", std::size_t(3));
        c.stem_hidden = m.value("stem_hidden", std::size_t(0));
        c.ffn_ratio = m.value("ffn_ratio", 3.0);
        c.norm_eps = m.value("norm_eps", 1e-6);
        c.validate();
    } else {
        throw std::invalid_argument("config: missing key 'preset' (or 'model')");
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown(t, {"lr", "weight_decay", "epochs", "batch_size"}, "train.");
        rc.train.lr = t.value("lr", 1e-3);
        rc.train.weight_decay = t.value("weight_decay", 0.05);
        rc.train.epochs = t.value("epochs", 20);
        rc.train.batch_size = t.value("batch_size", std::size_t(32));
    }
    return rc;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: parse error in '" + path + "': " + e.what());
    }
    return parse_config(j);
}

}  // namespace secvit
