#include "stcal/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <variant>

#include "stcal/error.hpp"

namespace stcal {

Mode mode_from_string(const std::string& s) {
    if (s == "baseline") return Mode::baseline;
    if (s == "kd") return Mode::kd;
    if (s == "feature_kd") return Mode::feature_kd;
    if (s == "sastc") return Mode::sastc;
    throw config_error("mode: expected baseline|kd|feature_kd|sastc, got '" + s + "'");
}

std::string mode_to_string(Mode m) {
    switch (m) {
        case Mode::baseline: return "baseline";
        case Mode::kd: return "kd";
        case Mode::feature_kd: return "feature_kd";
        case Mode::sastc: return "sastc";
    }
    return "?";
}

namespace {

using Member = std::variant<int64_t RunConfig::*, uint64_t RunConfig::*, double RunConfig::*,
                            bool RunConfig::*, std::string RunConfig::*>;

struct FieldDef {
    const char* key;
    Member member;
};

const std::vector<FieldDef>& registry() {
    static const std::vector<FieldDef> defs = {
        {"mode", &RunConfig::mode},
        {"T", &RunConfig::t_steps},
        {"b", &RunConfig::batch},
        {"epochs", &RunConfig::epochs},
        {"alpha", &RunConfig::alpha},
        {"beta", &RunConfig::beta},
        {"seed.init", &RunConfig::seed_init},
        {"seed.data", &RunConfig::seed_data},
        {"seed.noise", &RunConfig::seed_noise},
        {"precision", &RunConfig::precision},
        {"threads", &RunConfig::threads},
        {"log.mode", &RunConfig::log_mode},
        {"out.dir", &RunConfig::out_dir},
        {"out.name", &RunConfig::run_name},
        {"dataset.source", &RunConfig::dataset_source},
        {"dataset.path", &RunConfig::dataset_path},
        {"dataset.classes", &RunConfig::dataset_classes},
        {"dataset.per_class_train", &RunConfig::dataset_per_class_train},
        {"dataset.per_class_test", &RunConfig::dataset_per_class_test},
        {"dataset.image_size", &RunConfig::dataset_image_size},
        {"dataset.channels", &RunConfig::dataset_channels},
        {"dataset.noise_sigma", &RunConfig::dataset_noise_sigma},
        {"optimizer.kind", &RunConfig::opt_kind},
        {"optimizer.lr", &RunConfig::opt_lr},
        {"optimizer.momentum", &RunConfig::opt_momentum},
        {"optimizer.beta1", &RunConfig::opt_beta1},
        {"optimizer.beta2", &RunConfig::opt_beta2},
        {"optimizer.weight_decay", &RunConfig::opt_weight_decay},
        {"optimizer.cosine", &RunConfig::opt_cosine},
        {"lif.lambda", &RunConfig::lif_lambda},
        {"lif.v_th", &RunConfig::lif_v_th},
        {"lif.gamma", &RunConfig::lif_gamma},
        {"lif.u0", &RunConfig::lif_u0},
        {"lif.detach_reset", &RunConfig::lif_detach_reset},
        {"qk.d_h", &RunConfig::qk_d_h},
        {"qk.d_k", &RunConfig::qk_d_k},
        {"qk.per_layer", &RunConfig::qk_per_layer},
        {"teacher.channels", &RunConfig::teacher_channels},
        {"teacher.taps", &RunConfig::teacher_taps},
        {"teacher.epochs", &RunConfig::teacher_epochs},
        {"teacher.checkpoint", &RunConfig::teacher_checkpoint},
        {"student.channels", &RunConfig::student_channels},
        {"student.taps", &RunConfig::student_taps},
        {"pairs.feature_kd", &RunConfig::pairs_feature_kd},
        {"pairs.stm", &RunConfig::pairs_stm},
        {"stm.window", &RunConfig::stm_window},
        {"loss.batch_mean", &RunConfig::loss_batch_mean},
        {"loss.similarity_space", &RunConfig::loss_similarity_space},
        {"eval.T", &RunConfig::eval_t},
        {"noisy.fractions", &RunConfig::noisy_fractions},
        {"noisy.retrain_teacher", &RunConfig::noisy_retrain_teacher},
        {"noisy.modes", &RunConfig::noisy_modes},
        {"dump.calibration", &RunConfig::dump_calibration},
        {"checkpoint.include_calibration", &RunConfig::checkpoint_include_calibration},
    };
    return defs;
}

const FieldDef* find_field(const std::string& key) {
    for (const auto& f : registry())
        if (key == f.key) return &f;
    return nullptr;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        int64_t out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw config_error(key + ": expected integer, got '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw config_error(key + ": expected unsigned integer, got '" + v + "'");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw config_error(key + ": expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error(key + ": expected true|false, got '" + v + "'");
}

std::string format_value(const RunConfig& cfg, const Member& m) {
    struct Visitor {
        const RunConfig& cfg;
        std::string operator()(int64_t RunConfig::* p) const { return std::to_string(cfg.*p); }
        std::string operator()(uint64_t RunConfig::* p) const { return std::to_string(cfg.*p); }
        std::string operator()(double RunConfig::* p) const { return format_double(cfg.*p); }
        std::string operator()(bool RunConfig::* p) const { return cfg.*p ? "true" : "false"; }
        std::string operator()(std::string RunConfig::* p) const { return cfg.*p; }
    };
    return std::visit(Visitor{cfg}, m);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    const FieldDef* f = find_field(key);
    if (!f) throw config_error("unknown config key '" + key + "'");
    struct Visitor {
        RunConfig& cfg;
        const std::string& key;
        const std::string& value;
        void operator()(int64_t RunConfig::* p) const { cfg.*p = parse_i64(key, value); }
        void operator()(uint64_t RunConfig::* p) const { cfg.*p = parse_u64(key, value); }
        void operator()(double RunConfig::* p) const { cfg.*p = parse_f64(key, value); }
        void operator()(bool RunConfig::* p) const { cfg.*p = parse_bool(key, value); }
        void operator()(std::string RunConfig::* p) const { cfg.*p = value; }
    };
    std::visit(Visitor{*this, key, value}, f->member);
}

std::string RunConfig::get(const std::string& key) const {
    const FieldDef* f = find_field(key);
    if (!f) throw config_error("unknown config key '" + key + "'");
    return format_value(*this, f->member);
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& f : registry()) out.push_back(f.key);
    return out;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file '" + path + "'");
    std::string line, section;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw config_error(path + ":" + std::to_string(lineno) + ": malformed section");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (!section.empty()) key = section + "." + key;
        set(key, value);
    }
}

void RunConfig::apply_override(const std::string& token) {
    size_t eq = token.find('=');
    if (eq == std::string::npos || eq == 0)
        throw config_error("override '" + token + "' is not key=value");
    set(trim(token.substr(0, eq)), trim(token.substr(eq + 1)));
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    for (const auto& f : registry()) out << f.key << " = " << format_value(*this, f.member) << "\n";
    return out.str();
}

bool operator==(const RunConfig& a, const RunConfig& b) {
    for (const auto& key : RunConfig::keys())
        if (a.get(key) != b.get(key)) return false;
    return true;
}

std::vector<int64_t> parse_int_list(const std::string& s, const std::string& what) {
    std::vector<int64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_i64(what, item));
    }
    if (out.empty()) throw config_error(what + ": empty list");
    return out;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_f64(what, item));
    }
    if (out.empty()) throw config_error(what + ": empty list");
    return out;
}

LayerPairing parse_pairs(const std::string& s, const std::string& what) {
    LayerPairing out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        size_t colon = item.find(':');
        if (colon == std::string::npos)
            throw config_error(what + ": pair '" + item + "' is not s:a");
        out.emplace_back(parse_i64(what, trim(item.substr(0, colon))),
                         parse_i64(what, trim(item.substr(colon + 1))));
    }
    return out;
}

LifParams RunConfig::lif_params() const {
    LifParams p;
    p.lambda = lif_lambda;
    p.v_th = lif_v_th;
    p.gamma = lif_gamma;
    p.u0 = lif_u0;
    p.detach_reset = lif_detach_reset;
    return p;
}

std::vector<int64_t> RunConfig::teacher_channel_list() const {
    return parse_int_list(teacher_channels, "teacher.channels");
}

std::vector<int64_t> RunConfig::student_channel_list() const {
    return parse_int_list(student_channels, "student.channels");
}

namespace {
std::vector<bool> parse_tap_list(const std::string& s, const std::string& what, size_t stages) {
    auto ints = parse_int_list(s, what);
    if (ints.size() != stages)
        throw config_error(what + ": " + std::to_string(ints.size()) + " entries for " +
                           std::to_string(stages) + " stages");
    std::vector<bool> out;
    bool any = false;
    for (int64_t v : ints) {
        if (v != 0 && v != 1) throw config_error(what + ": entries must be 0 or 1");
        out.push_back(v == 1);
        any = any || v == 1;
    }
    if (!any) throw config_error(what + ": at least one stage must be tapped");
    return out;
}
}  // namespace

std::vector<bool> RunConfig::teacher_tap_list() const {
    return parse_tap_list(teacher_taps, "teacher.taps", teacher_channel_list().size());
}

std::vector<bool> RunConfig::student_tap_list() const {
    return parse_tap_list(student_taps, "student.taps", student_channel_list().size());
}

LayerPairing RunConfig::feature_pairs() const {
    return parse_pairs(pairs_feature_kd, "pairs.feature_kd");
}

LayerPairing RunConfig::stm_pairs(int64_t s_count, int64_t a_count) const {
    if (pairs_stm == "auto") return default_pairing(s_count, a_count);
    auto pairs = parse_pairs(pairs_stm, "pairs.stm");
    if (pairs.empty()) throw config_error("pairs.stm: empty pairing");
    return pairs;
}

std::vector<double> RunConfig::noisy_fraction_list() const {
    auto out = parse_double_list(noisy_fractions, "noisy.fractions");
    for (double p : out)
        if (p < 0.0 || p > 1.0)
            throw config_error("noisy.fractions: fraction " + format_double(p) +
                               " outside [0,1]");
    return out;
}

std::vector<std::string> RunConfig::noisy_mode_list() const {
    std::vector<std::string> out;
    std::stringstream ss(noisy_modes);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        mode_from_string(item);
        out.push_back(item);
    }
    if (out.empty()) throw config_error("noisy.modes: empty list");
    return out;
}

std::string RunConfig::resolved_out_root() const {
    if (!out_dir.empty()) return out_dir;
    if (const char* env = std::getenv("STCAL_OUT_ROOT"); env && *env) return env;
    return "runs";
}

std::string RunConfig::run_dir() const {
    std::string name = run_name;
    if (name.empty())
        name = mode + "_T" + std::to_string(t_steps) + "_s" + std::to_string(seed_init);
    return resolved_out_root() + "/" + name;
}

void RunConfig::validate() const {
    mode_from_string(mode);
    if (t_steps < 1) throw config_error("T: must be >= 1, got " + std::to_string(t_steps));
    if (batch < 2) throw config_error("b: must be >= 2, got " + std::to_string(batch));
    if (epochs < 1) throw config_error("epochs: must be >= 1");
    if (alpha <= 0.0) throw config_error("alpha: must be > 0");
    if (beta < 0.0) throw config_error("beta: must be >= 0");
    if (precision != "f64" && precision != "f32")
        throw config_error("precision: expected f64|f32, got '" + precision + "'");
    if (log_mode != "strict" && log_mode != "lenient")
        throw config_error("log.mode: expected strict|lenient, got '" + log_mode + "'");
    if (threads < 0) throw config_error("threads: must be >= 0");
    if (dataset_source != "synth" && dataset_source != "idx" && dataset_source != "raw")
        throw config_error("dataset.source: expected synth|idx|raw, got '" + dataset_source + "'");
    if (dataset_source != "synth" && dataset_path.empty())
        throw config_error("dataset.path: required for source '" + dataset_source + "'");
    if (dataset_classes < 2) throw config_error("dataset.classes: must be >= 2");
    if (dataset_per_class_train < 1 || dataset_per_class_test < 1)
        throw config_error("dataset.per_class_*: must be >= 1");
    if (dataset_image_size < 2) throw config_error("dataset.image_size: must be >= 2");
    if (dataset_channels < 1) throw config_error("dataset.channels: must be >= 1");
    if (dataset_noise_sigma < 0.0) throw config_error("dataset.noise_sigma: must be >= 0");
    if (opt_kind != "sgd-momentum" && opt_kind != "adam")
        throw config_error("optimizer.kind: expected sgd-momentum|adam, got '" + opt_kind + "'");
    if (opt_lr < 0.0) throw config_error("optimizer.lr: must be >= 0");
    if (opt_momentum < 0.0 || opt_momentum >= 1.0)
        throw config_error("optimizer.momentum: must be in [0,1)");
    if (opt_weight_decay < 0.0) throw config_error("optimizer.weight_decay: must be >= 0");
    lif_params().validate();
    if (qk_d_h < 1 || qk_d_k < 1) throw config_error("qk.d_h/qk.d_k: must be >= 1");
    if (teacher_epochs < 1) throw config_error("teacher.epochs: must be >= 1");
    if (stm_window < 1) throw config_error("stm.window: must be >= 1");
    if (eval_t < 0) throw config_error("eval.T: must be >= 0");
    teacher_tap_list();
    student_tap_list();
    noisy_fraction_list();
    noisy_mode_list();
    if (mode_enum() == Mode::feature_kd && feature_pairs().empty())
        throw config_error("pairs.feature_kd: feature_kd mode requires an explicit pairing list");
    if (pairs_stm != "auto" && parse_pairs(pairs_stm, "pairs.stm").empty())
        throw config_error("pairs.stm: expected 'auto' or explicit pairs");
}

}  // namespace stcal
