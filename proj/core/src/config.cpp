#include <jof/config.hpp>

#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace jof {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

} // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(line_no) + " is not key = value");
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty()) throw UsageError("config line " + std::to_string(line_no) + ": empty key");
        kv[key] = trim(stripped.substr(eq + 1));
    }
    return kv;
}

KeyValues load_key_values(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_key_values(buf.str());
}

KeyValues merge_key_values(KeyValues base, const KeyValues& overrides) {
    for (const auto& [k, v] : overrides) base[k] = v;
    return base;
}

int parse_int(const std::string& key, const std::string& value) {
    const std::uint64_t u = parse_u64(key, value);
    if (u > 0x7fffffffull) throw UsageError("value out of range for " + key + ": " + value);
    return static_cast<int>(u);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        // stoull wraps negative input instead of rejecting it
        if (value.find('-') != std::string::npos) throw UsageError("");
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw UsageError("");
        return v;
    } catch (const std::exception&) {
        throw UsageError("expected a non-negative integer for " + key + ": " + value);
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw UsageError("");
        return v;
    } catch (const std::exception&) {
        throw UsageError("expected a number for " + key + ": " + value);
    }
}

namespace {

struct Field {
    const char* name;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

#define JOF_INT_FIELD(member)                                                        \
    Field{#member, [](TrainConfig& c, const std::string& v) { c.member = parse_int(#member, v); }, \
          [](const TrainConfig& c) { return std::to_string(c.member); }}
#define JOF_DBL_FIELD(member)                                                        \
    Field{#member,                                                                   \
          [](TrainConfig& c, const std::string& v) { c.member = parse_double(#member, v); }, \
          [](const TrainConfig& c) { return fmt(c.member); }}
#define JOF_W_FIELD(member)                                                          \
    Field{#member,                                                                   \
          [](TrainConfig& c, const std::string& v) { c.weights.member = parse_double(#member, v); }, \
          [](const TrainConfig& c) { return fmt(c.weights.member); }}
#define JOF_STR_FIELD(member)                                                        \
    Field{#member, [](TrainConfig& c, const std::string& v) { c.member = v; },       \
          [](const TrainConfig& c) { return c.member; }}

const std::vector<Field>& train_fields() {
    static const std::vector<Field> fields = {
        JOF_INT_FIELD(branches),
        JOF_INT_FIELD(l_C),
        JOF_INT_FIELD(l_S),
        JOF_INT_FIELD(l_A),
        JOF_INT_FIELD(trunk_width),
        JOF_INT_FIELD(trunk_depth),
        JOF_INT_FIELD(voxel_hidden),
        JOF_INT_FIELD(head_hidden),
        JOF_INT_FIELD(categories),
        JOF_INT_FIELD(width),
        JOF_INT_FIELD(height),
        JOF_DBL_FIELD(focal),
        JOF_INT_FIELD(voxel_res),
        JOF_INT_FIELD(points_per_shape),
        JOF_INT_FIELD(boundary_count),
        JOF_DBL_FIELD(boundary_probe),
        JOF_DBL_FIELD(search_epsilon),
        JOF_INT_FIELD(search_binary_iters),
        JOF_INT_FIELD(batch_size),
        JOF_INT_FIELD(steps1),
        JOF_INT_FIELD(steps2),
        JOF_INT_FIELD(steps3),
        JOF_INT_FIELD(fit_iters),
        JOF_DBL_FIELD(lr_step1),
        JOF_DBL_FIELD(lr_step2),
        JOF_DBL_FIELD(lr_step3),
        JOF_DBL_FIELD(lr_fit),
        JOF_INT_FIELD(checkpoint_every),
        Field{"seed",
              [](TrainConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
              [](const TrainConfig& c) { return std::to_string(c.seed); }},
        JOF_INT_FIELD(threads),
        JOF_W_FIELD(lambda1),
        JOF_W_FIELD(lambda2),
        JOF_W_FIELD(lambda3),
        JOF_W_FIELD(lambda_C),
        JOF_W_FIELD(lambda_S),
        JOF_W_FIELD(lambda_A),
        JOF_W_FIELD(lambda_P),
        JOF_W_FIELD(alpha),
        JOF_W_FIELD(p),
        JOF_W_FIELD(shading_target),
        JOF_STR_FIELD(data_dir),
        JOF_STR_FIELD(real_dir),
        JOF_STR_FIELD(out_dir),
    };
    return fields;
}

#undef JOF_INT_FIELD
#undef JOF_DBL_FIELD
#undef JOF_W_FIELD
#undef JOF_STR_FIELD

void require_positive(double v, const char* what) {
    if (!(v > 0.0)) throw UsageError(std::string(what) + " must be positive");
}

} // namespace

void TrainConfig::validate() const {
    require_positive(branches, "branches");
    require_positive(l_C, "l_C");
    require_positive(l_S, "l_S");
    require_positive(l_A, "l_A");
    require_positive(trunk_width, "trunk_width");
    require_positive(trunk_depth, "trunk_depth");
    require_positive(voxel_hidden, "voxel_hidden");
    require_positive(head_hidden, "head_hidden");
    require_positive(categories, "categories");
    require_positive(width, "width");
    require_positive(height, "height");
    require_positive(focal, "focal");
    require_positive(voxel_res, "voxel_res");
    require_positive(points_per_shape, "points_per_shape");
    require_positive(boundary_count, "boundary_count");
    require_positive(boundary_probe, "boundary_probe");
    require_positive(search_epsilon, "search_epsilon");
    require_positive(search_binary_iters, "search_binary_iters");
    require_positive(batch_size, "batch_size");
    require_positive(steps1, "steps1");
    require_positive(steps2, "steps2");
    require_positive(steps3, "steps3");
    require_positive(fit_iters, "fit_iters");
    require_positive(lr_step1, "lr_step1");
    require_positive(lr_step2, "lr_step2");
    require_positive(lr_step3, "lr_step3");
    require_positive(lr_fit, "lr_fit");
    require_positive(checkpoint_every, "checkpoint_every");
    require_positive(threads, "threads");
    weights.validate();
}

SearchConfig TrainConfig::search() const {
    SearchConfig s;
    s.epsilon = search_epsilon;
    s.binary_iters = search_binary_iters;
    return s;
}

void TrainConfig::to_store(TensorStore& store, const std::string& prefix) const {
    for (const Field& f : train_fields()) {
        const std::string name = f.name;
        if (name == "data_dir" || name == "real_dir" || name == "out_dir") continue;
        store.put(Tensor::scalar(prefix + "." + name, parse_double(name, f.get(*this))));
    }
}

TrainConfig TrainConfig::from_store(const TensorStore& store, const std::string& prefix) {
    TrainConfig cfg;
    for (const Field& f : train_fields()) {
        const std::string name = f.name;
        if (name == "data_dir" || name == "real_dir" || name == "out_dir") continue;
        const double v = store.get(prefix + "." + name).as_scalar();
        f.set(cfg, fmt(v));
    }
    return cfg;
}

TrainConfig train_config_from_kv(const KeyValues& kv) {
    TrainConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key.rfind("data.", 0) == 0) continue;
        bool known = false;
        for (const Field& f : train_fields())
            if (key == f.name) {
                f.set(cfg, value);
                known = true;
                break;
            }
        if (!known) throw UsageError("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

std::string train_config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    for (const Field& f : train_fields()) {
        const std::string v = f.get(cfg);
        if (v.empty()) continue;
        out << f.name << " = " << v << "\n";
    }
    return out.str();
}

namespace {

struct DataField {
    const char* name;
    std::function<void(DatasetConfig&, const std::string&)> set;
    std::function<std::string(const DatasetConfig&)> get;
};

#define JOF_DINT_FIELD(member)                                                        \
    DataField{#member,                                                                \
              [](DatasetConfig& c, const std::string& v) { c.member = parse_int(#member, v); }, \
              [](const DatasetConfig& c) { return std::to_string(c.member); }}
#define JOF_DDBL_FIELD(member)                                                        \
    DataField{#member,                                                                \
              [](DatasetConfig& c, const std::string& v) { c.member = parse_double(#member, v); }, \
              [](const DatasetConfig& c) { return fmt(c.member); }}

const std::vector<DataField>& data_fields() {
    static const std::vector<DataField> fields = {
        JOF_DINT_FIELD(n_shapes),
        JOF_DINT_FIELD(views),
        JOF_DINT_FIELD(width),
        JOF_DINT_FIELD(height),
        JOF_DDBL_FIELD(focal),
        JOF_DINT_FIELD(voxel_res),
        JOF_DINT_FIELD(point_samples),
        JOF_DDBL_FIELD(near_surface_fraction),
        JOF_DDBL_FIELD(dist_min),
        JOF_DDBL_FIELD(dist_max),
        JOF_DDBL_FIELD(elevation_min),
        JOF_DDBL_FIELD(elevation_max),
        JOF_DDBL_FIELD(light_dc_min),
        JOF_DDBL_FIELD(light_dc_max),
        JOF_DDBL_FIELD(light_band),
        JOF_DINT_FIELD(categories),
    };
    return fields;
}

#undef JOF_DINT_FIELD
#undef JOF_DDBL_FIELD

} // namespace

DatasetConfig dataset_config_from_kv(const KeyValues& kv) {
    DatasetConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key.rfind("data.", 0) != 0) continue;
        const std::string name = key.substr(5);
        bool known = false;
        for (const DataField& f : data_fields())
            if (name == f.name) {
                f.set(cfg, value);
                known = true;
                break;
            }
        if (!known) throw UsageError("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

std::string dataset_config_to_text(const DatasetConfig& cfg) {
    std::ostringstream out;
    for (const DataField& f : data_fields()) out << "data." << f.name << " = " << f.get(cfg) << "\n";
    return out.str();
}

} // namespace jof
