#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stcal/lif.hpp"
#include "stcal/metrics.hpp"

namespace stcal {

enum class Mode { baseline, kd, feature_kd, sastc };

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

// Flat dotted-key configuration for a whole run; every key is settable from a
// config file ([section] sugar) or a key=value override.
struct RunConfig {
    std::string mode = "sastc";
    int64_t t_steps = 3;  // key "T"
    int64_t batch = 64;   // key "b"
    int64_t epochs = 40;
    double alpha = 1.0;
    double beta = 4.0;
    uint64_t seed_init = 1;
    uint64_t seed_data = 1001;
    uint64_t seed_noise = 2001;
    std::string precision = "f64";
    int64_t threads = 0;  // 0 = library default
    std::string log_mode = "lenient";
    std::string out_dir;   // empty -> $STCAL_OUT_ROOT or "runs"
    std::string run_name;  // empty -> derived from mode/T/seed

    std::string dataset_source = "synth";  // synth | idx | raw
    std::string dataset_path;              // prefix for idx/raw files
    int64_t dataset_classes = 3;
    int64_t dataset_per_class_train = 200;
    int64_t dataset_per_class_test = 100;
    int64_t dataset_image_size = 16;
    int64_t dataset_channels = 3;
    double dataset_noise_sigma = 0.1;

    std::string opt_kind = "sgd-momentum";  // sgd-momentum | adam
    double opt_lr = 0.05;
    double opt_momentum = 0.9;
    double opt_beta1 = 0.9;
    double opt_beta2 = 0.999;
    double opt_weight_decay = 5e-4;
    bool opt_cosine = true;

    double lif_lambda = 0.5;
    double lif_v_th = 1.0;
    double lif_gamma = 0.3;
    double lif_u0 = 0.0;
    bool lif_detach_reset = false;

    int64_t qk_d_h = 64;
    int64_t qk_d_k = 32;
    bool qk_per_layer = false;

    std::string teacher_channels = "16,32,64";
    std::string teacher_taps = "1,1,1";
    int64_t teacher_epochs = 20;
    std::string teacher_checkpoint;  // empty -> <out>/teacher.stck

    std::string student_channels = "8,16";
    std::string student_taps = "1,1";

    std::string pairs_feature_kd;        // "s:a[,s:a...]", required in feature_kd mode
    std::string pairs_stm = "auto";      // auto = depth-aligned last min
    int64_t stm_window = 10;

    bool loss_batch_mean = true;
    bool loss_similarity_space = false;

    int64_t eval_t = 0;  // 0 = training T

    std::string noisy_fractions = "0.1,0.2,0.3";
    bool noisy_retrain_teacher = false;
    std::string noisy_modes = "baseline,sastc";

    bool dump_calibration = false;
    bool checkpoint_include_calibration = false;

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static std::vector<std::string> keys();

    void load_file(const std::string& path);
    void apply_override(const std::string& token);  // "key=value"
    void validate() const;
    std::string echo() const;  // reparses to an equal config

    // derived views
    LifParams lif_params() const;
    std::vector<int64_t> teacher_channel_list() const;
    std::vector<int64_t> student_channel_list() const;
    std::vector<bool> teacher_tap_list() const;
    std::vector<bool> student_tap_list() const;
    LayerPairing feature_pairs() const;
    LayerPairing stm_pairs(int64_t s_count, int64_t a_count) const;
    std::vector<double> noisy_fraction_list() const;
    std::vector<std::string> noisy_mode_list() const;
    std::string resolved_out_root() const;
    std::string run_dir() const;
    Mode mode_enum() const { return mode_from_string(mode); }
};

bool operator==(const RunConfig& a, const RunConfig& b);

std::vector<int64_t> parse_int_list(const std::string& s, const std::string& what);
std::vector<double> parse_double_list(const std::string& s, const std::string& what);
LayerPairing parse_pairs(const std::string& s, const std::string& what);

}  // namespace stcal
