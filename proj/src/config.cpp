// SPDX-License-Identifier: Apache-2.0
#include "smoothfat/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "smoothfat/eval.hpp"

namespace smoothfat {

namespace {

using nlohmann::json;

// Reads the keys of one JSON object and reports whatever is left unread.
class Section {
public:
    Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_, "expected an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    template <class T>
    void read(const std::string& key, T& out) {
        const json* v = find(key);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) throw ConfigError(at(key), "expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v->is_number_integer()) throw ConfigError(at(key), "expected an integer");
                if (std::is_unsigned_v<T> && v->get<long long>() < 0)
                    throw ConfigError(at(key), "expected a non-negative integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v->is_number()) throw ConfigError(at(key), "expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v->is_string()) throw ConfigError(at(key), "expected a string");
            }
            out = v->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(at(key), e.what());
        }
    }

    template <class T>
    void read_list(const std::string& key, std::vector<T>& out) {
        const json* v = find(key);
        if (!v) return;
        if (!v->is_array()) throw ConfigError(at(key), "expected an array");
        std::vector<T> values;
        for (std::size_t i = 0; i < v->size(); ++i) {
            const json& e = (*v)[i];
            if (!e.is_number_integer() || e.get<long long>() < 0)
                throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a non-negative integer");
            values.push_back(e.get<T>());
        }
        out = std::move(values);
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class Fn>
void checked(const std::string& path, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

void parse_model(const json& j, ModelSpec& m) {
    Section s(j, "model");
    std::string kind = m.kind == ModelKind::mlp ? "mlp" : "cnn";
    s.read("kind", kind);
    if (kind == "mlp")
        m.kind = ModelKind::mlp;
    else if (kind == "cnn")
        m.kind = ModelKind::cnn;
    else
        throw ConfigError("model.kind", "expected 'mlp' or 'cnn', got '" + kind + "'");
    s.read_list("input_shape", m.input_shape);
    s.read_list("hidden", m.hidden);
    s.read_list("channels", m.channels);
    s.read("classes", m.classes);
    s.finish();
    checked("model", [&] { m.validate(); });
}

void parse_data(const json& j, DataConfig& d, const std::filesystem::path& base) {
    Section s(j, "data");
    std::string kind = "idx";
    s.read("kind", kind);
    s.read("classes", d.classes);
    if (kind == "idx") {
        d.kind = DataKind::idx;
        for (auto [key, target] : {std::pair{"train_images", &d.train_images}, {"train_labels", &d.train_labels},
                                   {"test_images", &d.test_images}, {"test_labels", &d.test_labels}}) {
            std::string p;
            s.read(key, p);
            if (p.empty()) throw ConfigError(s.at(key), "required for idx data");
            *target = resolve(base, p);
        }
        s.read("train_limit", d.train_limit);
        s.read("test_limit", d.test_limit);
    } else if (kind == "blobs") {
        d.kind = DataKind::blobs;
        s.read("per_class", d.per_class);
        s.read("test_per_class", d.test_per_class);
        s.read("dimension", d.dimension);
        s.read("separation", d.separation);
        s.read("noise", d.noise);
        s.read("seed", d.seed);
        if (!(d.separation > 0.0)) throw ConfigError("data.separation", "must be positive");
        if (d.per_class < 1 || d.test_per_class < 1) throw ConfigError("data.per_class", "must be >= 1");
        if (d.dimension < 1) throw ConfigError("data.dimension", "must be >= 1");
    } else {
        throw ConfigError("data.kind", "expected 'idx' or 'blobs', got '" + kind + "'");
    }
    if (d.classes < 2) throw ConfigError("data.classes", "must be >= 2");
    s.finish();
}

void parse_attack(const json& j, AttackConfig& a) {
    Section s(j, "attack");
    if (const json* v = s.find("xi")) a.xi = parse_fraction(*v, "attack.xi");
    a.step = a.xi;
    if (const json* v = s.find("step")) a.step = parse_fraction(*v, "attack.step");
    s.read("steps", a.steps);
    std::string init = to_string(a.init);
    s.read("init", init);
    checked("attack.init", [&] { a.init = parse_init_strategy(init); });
    s.read("mep_momentum", a.mep_momentum);
    s.finish();
    checked("attack", [&] { a.validate(); });
}

void parse_smooth(const json& j, SmoothConfig& c) {
    Section s(j, "smooth");
    std::string variant = to_string(c.variant);
    s.read("variant", variant);
    checked("smooth.variant", [&] { c.variant = parse_smooth_variant(variant); });
    s.read("w1", c.w1);
    s.read("w2", c.w2);
    s.read("w3", c.w3);
    const json* ratio = s.find("gamma_ratio");
    s.read("gamma_max", c.gamma_max);
    if (ratio) {
        if (!ratio->is_number() || !(ratio->get<double>() >= 1.0))
            throw ConfigError("smooth.gamma_ratio", "expected a number >= 1");
        if (s.find("gamma_min"))
            throw ConfigError("smooth.gamma_ratio", "give either gamma_min or gamma_ratio");
        c.gamma_min = c.gamma_max / ratio->get<double>();
    } else {
        c.gamma_min = c.gamma_max / 1.5;
        s.read("gamma_min", c.gamma_min);
    }
    s.read("centralization", c.centralization);
    s.read("mep_logit_weight", c.mep_logit_weight);
    s.finish();
    if (c.centralization && c.mep_logit_weight > 0.0)
        throw ConfigError("smooth", "centralization and mep_logit_weight are mutually exclusive");
    checked("smooth", [&] { c.validate(); });
}

void parse_train(const json& j, TrainConfig& t) {
    Section s(j, "train");
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("lr", t.lr);
    s.read("momentum", t.momentum);
    s.read("weight_decay", t.weight_decay);
    if (const json* v = s.find("lr_decay_epochs")) {
        if (!v->is_array()) throw ConfigError("train.lr_decay_epochs", "expected an array");
        std::vector<int> epochs;
        for (const auto& e : *v) {
            if (!e.is_number_integer()) throw ConfigError("train.lr_decay_epochs", "expected integers");
            epochs.push_back(e.get<int>());
        }
        t.lr_decay_epochs = epochs;
    }
    s.read("lr_decay_factor", t.lr_decay_factor);
    s.read("seed", t.seed);
    s.read("eval_samples", t.eval_samples);
    s.read("eval_steps", t.eval_steps);
    if (const json* v = s.find("eval_step")) t.eval_step = parse_fraction(*v, "train.eval_step");
    s.read("log_wall_time", t.log_wall_time);
    s.read("threads", t.threads);
    if (const json* v = s.find("detector")) {
        Section d(*v, "train.detector");
        d.read("window", t.detector.window);
        d.read("threshold", t.detector.threshold);
        d.read("ben_fraction", t.detector.ben_fraction);
        d.finish();
    }
    s.finish();
}

void parse_eval(const json& j, EvalConfig& e, double xi) {
    Section s(j, "eval");
    s.read("attacks", e.attacks);
    s.read("samples", e.samples);
    if (const json* v = s.find("pgd_step")) e.pgd_step = parse_fraction(*v, "eval.pgd_step");
    s.finish();
    checked("eval.attacks", [&] { parse_attack_list(e.attacks, xi, e.pgd_step); });
    if (e.samples < 1) throw ConfigError("eval.samples", "must be >= 1");
}

json& walk(json& doc, const std::string& dotted) {
    json* node = &doc;
    std::stringstream ss(dotted);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty() || std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.empty(); }))
        throw ConfigError(dotted, "malformed override key");
    for (const auto& p : parts) {
        if (node->is_null()) *node = json::object();
        if (!node->is_object()) throw ConfigError(dotted, "override descends into a non-object");
        node = &(*node)[p];
    }
    return *node;
}

}  // namespace

double parse_fraction(const json& value, const std::string& path) {
    if (value.is_number()) return value.get<double>();
    if (value.is_string()) {
        const std::string text = value.get<std::string>();
        const auto slash = text.find('/');
        try {
            std::size_t used = 0;
            if (slash == std::string::npos) {
                const double v = std::stod(text, &used);
                if (used == text.size()) return v;
            } else {
                const std::string num = text.substr(0, slash), den = text.substr(slash + 1);
                std::size_t used_den = 0;
                const double a = std::stod(num, &used), b = std::stod(den, &used_den);
                if (used == num.size() && used_den == den.size() && b != 0.0) return a / b;
            }
        } catch (const std::exception&) {
        }
    }
    throw ConfigError(path, "expected a number or an \"a/b\" fraction");
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    walk(doc, key) = value;
}

ExperimentConfig parse_experiment(const json& doc, const std::filesystem::path& base_dir) {
    ExperimentConfig cfg;
    cfg.resolved = doc;
    Section root(doc, "");
    if (const json* v = root.find("model")) parse_model(*v, cfg.train.model);
    const json* data = root.find("data");
    if (!data) throw ConfigError("data", "required");
    parse_data(*data, cfg.data, base_dir);
    if (const json* v = root.find("attack")) parse_attack(*v, cfg.train.attack);
    if (const json* v = root.find("smooth")) parse_smooth(*v, cfg.train.smooth);
    if (const json* v = root.find("train")) parse_train(*v, cfg.train);
    if (const json* v = root.find("eval")) parse_eval(*v, cfg.eval, cfg.train.attack.xi);
    root.read("repeats", cfg.repeats);
    std::string out = cfg.output_dir.string();
    root.read("output_dir", out);
    cfg.output_dir = resolve(base_dir, out);
    root.finish();
    if (cfg.repeats < 1) throw ConfigError("repeats", "must be >= 1");
    if (cfg.train.model.classes != cfg.data.classes)
        throw ConfigError("model.classes", "does not match data.classes");
    if (cfg.data.kind == DataKind::blobs && cfg.train.model.input_size() != cfg.data.dimension)
        throw ConfigError("model.input_shape", "does not match data.dimension");
    checked("train", [&] { cfg.train.validate(); });
    return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream is(path);
    if (!is) throw ConfigError("", "cannot read config " + path.string());
    json doc = json::parse(is, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("", path.string() + " is not valid JSON");
    for (const auto& o : overrides) apply_override(doc, o);
    ExperimentConfig cfg = parse_experiment(doc, path.parent_path());
    cfg.overrides = overrides;
    return cfg;
}

namespace {

Dataset limit(Dataset d, std::size_t count) {
    if (count == 0 || count >= d.size()) return d;
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    return d.subset(idx);
}

// Train and test share the class centres: draw both from one call and split each class.
Dataset blobs_split(const DataConfig& c, bool test) {
    const std::size_t per = c.per_class + c.test_per_class;
    const Dataset all = make_blobs(c.classes, per, c.dimension, c.separation, c.seed, c.noise);
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < c.classes; ++k) {
        const std::size_t lo = k * per + (test ? c.per_class : 0);
        const std::size_t hi = test ? (k + 1) * per : k * per + c.per_class;
        for (std::size_t i = lo; i < hi; ++i) idx.push_back(i);
    }
    return all.subset(idx);
}

}  // namespace

Dataset load_train_data(const DataConfig& c) {
    if (c.kind == DataKind::blobs) return blobs_split(c, false);
    return limit(load_idx(c.train_images, c.train_labels, c.classes), c.train_limit);
}

Dataset load_test_data(const DataConfig& c) {
    if (c.kind == DataKind::blobs) return blobs_split(c, true);
    return limit(load_idx(c.test_images, c.test_labels, c.classes), c.test_limit);
}

}  // namespace smoothfat
