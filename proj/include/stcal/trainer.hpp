#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stcal/calibration.hpp"
#include "stcal/config.hpp"
#include "stcal/data.hpp"
#include "stcal/metrics.hpp"
#include "stcal/model.hpp"

namespace stcal {

// Applies precision / log-mode / thread-count globals from a config.
void apply_globals(const RunConfig& cfg);

ArchSpec teacher_arch(const RunConfig& cfg);
ArchSpec student_arch(const RunConfig& cfg);

// Stable stream splitting so independent consumers (splits, shuffles, noise)
// never share draws.
uint64_t derive_seed(uint64_t base, uint64_t tag);

Dataset load_split(const RunConfig& cfg, const std::string& split);  // "train" | "test"

std::string teacher_checkpoint_path(const RunConfig& cfg);

void save_network(const std::string& path, const Network& net,
                  std::vector<std::pair<std::string, std::string>> meta);
// Arch mismatch against `expected` is an io error naming the field.
Network load_network(const std::string& path, const ArchSpec& expected);

struct TeacherResult {
    Network net;
    double final_train_acc = 0.0;
    double final_test_acc = 0.0;
    int64_t epochs_run = 0;
};

// CE training; on divergence saves the last finished epoch's parameters to
// ckpt_path and throws. Writes per-epoch records to "<ckpt_path>.log".
TeacherResult train_teacher(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                            const std::string& ckpt_path);

// Loads the configured teacher checkpoint, training and saving it first when
// absent and `train_if_missing` is set.
Network obtain_teacher(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                       bool train_if_missing);

struct DistillResult {
    Network student;
    std::optional<CalibrationBank> bank;
    std::vector<double> stm_raw;       // per epoch, probe batch
    StmReport stm;
    std::vector<double> test_acc;      // per epoch
    double final_test_acc = 0.0;
    double final_train_acc = 0.0;
    std::string run_dir;
};

DistillResult distill(const RunConfig& cfg, const Network& teacher, const Dataset& train,
                      const Dataset& test);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> spike_rates;  // per stage
};

EvalResult evaluate(const Network& student, const Dataset& ds, int64_t t_steps,
                    const LifParams& lif, int64_t batch);

struct TableRow {
    std::string label;
    double fraction = 0.0;  // noisy suite only
    double accuracy = 0.0;
    double stm_ln = 0.0;
};

// One feature_kd run per (s_l, a_l) pair plus kd and sastc reference runs.
std::vector<TableRow> ablation_fixed_pairs(const RunConfig& cfg);

// Per label-noise fraction, distills every mode in noisy.modes and evaluates
// on the clean test split.
std::vector<TableRow> noisy_label_suite(const RunConfig& cfg);

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows);

}  // namespace stcal
