#include "stcal/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "stcal/error.hpp"
#include "stcal/grad_check.hpp"
#include "stcal/metrics.hpp"
#include "stcal/trainer.hpp"

namespace fs = std::filesystem;

namespace stcal {

namespace {

const char* kUsage = R"(usage: stcal <verb> [--config FILE] [key=value ...]

verbs:
  gen-data       render the synthetic dataset to dataset.path as raw tensors
  train-teacher  CE-train the teacher and write its checkpoint
  distill        run one distillation (mode = baseline|kd|feature_kd|sastc)
  eval           evaluate a student checkpoint on the test split
  stm            report the spatio-temporal mismatch of a student checkpoint
  ablate-pairs   one feature_kd run per layer pair, plus kd/sastc references
  noisy-suite    distill across label-noise fractions
  grad-check     autodiff verification sweep (args: [trials] [seed])
  summary        tabulate summary records from run directories

flags:
  --config FILE      load config before applying key=value overrides
  --checkpoint FILE  student checkpoint for eval/stm (default <run>/student.stck)
  --rec FILE         summary: also write machine-readable records
  --help             this text

exit codes: 0 success, 1 usage/validation error, 2 operational failure.
)";

struct Invocation {
    std::string verb;
    std::string config_path;
    std::string checkpoint;
    std::string rec_path;
    std::vector<std::string> overrides;
    std::vector<std::string> positional;
    bool help = false;
};

Invocation parse_args(const std::vector<std::string>& args) {
    Invocation inv;
    size_t i = 0;
    if (!args.empty() && args[0].rfind("--", 0) != 0) {
        inv.verb = args[0];
        i = 1;
    }
    auto need_value = [&](const std::string& flag) -> std::string {
        if (i + 1 >= args.size()) throw config_error(flag + " requires a value");
        return args[++i];
    };
    for (; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--help" || a == "-h") {
            inv.help = true;
        } else if (a == "--config") {
            inv.config_path = need_value(a);
        } else if (a == "--checkpoint") {
            inv.checkpoint = need_value(a);
        } else if (a == "--rec") {
            inv.rec_path = need_value(a);
        } else if (a.rfind("--", 0) == 0) {
            throw config_error("unknown flag '" + a + "'");
        } else if (a.find('=') != std::string::npos) {
            inv.overrides.push_back(a);
        } else {
            inv.positional.push_back(a);
        }
    }
    return inv;
}

RunConfig make_config(const Invocation& inv) {
    RunConfig cfg;
    if (!inv.config_path.empty()) cfg.load_file(inv.config_path);
    for (const auto& o : inv.overrides) cfg.apply_override(o);
    cfg.validate();
    return cfg;
}

int cmd_gen_data(const Invocation& inv) {
    RunConfig cfg = make_config(inv);
    if (cfg.dataset_path.empty())
        throw config_error("dataset.path: required by gen-data (output directory)");
    apply_globals(cfg);
    fs::create_directories(cfg.dataset_path);
    RunConfig synth = cfg;
    synth.dataset_source = "synth";
    for (const char* split : {"train", "test"}) {
        Dataset ds = load_split(synth, split);
        const std::string stem = cfg.dataset_path + "/" + split;
        save_raw(ds, stem + "-images.stns", stem + "-labels.stlb");
        std::cout << format_record({{"kind", "gen-data"},
                                    {"split", split},
                                    {"n", std::to_string(ds.size())},
                                    {"classes", std::to_string(ds.classes)},
                                    {"path", stem + "-images.stns"}})
                  << "\n";
    }
    return 0;
}

int cmd_train_teacher(const Invocation& inv) {
    RunConfig cfg = make_config(inv);
    Dataset train = load_split(cfg, "train");
    Dataset test = load_split(cfg, "test");
    const std::string path = teacher_checkpoint_path(cfg);
    TeacherResult res = train_teacher(cfg, train, test, path);
    std::cout << format_record({{"kind", "teacher"},
                                {"epochs", std::to_string(res.epochs_run)},
                                {"train_acc", format_double(res.final_train_acc)},
                                {"test_acc", format_double(res.final_test_acc)},
                                {"checkpoint", path}})
              << "\n";
    return 0;
}

int cmd_distill(const Invocation& inv) {
    RunConfig cfg = make_config(inv);
    Dataset train = load_split(cfg, "train");
    Dataset test = load_split(cfg, "test");
    Network teacher = obtain_teacher(cfg, train, test, /*train_if_missing=*/true);
    DistillResult res = distill(cfg, teacher, train, test);
    std::cout << format_record({{"kind", "distill"},
                                {"mode", cfg.mode},
                                {"T", std::to_string(cfg.t_steps)},
                                {"seed", std::to_string(cfg.seed_init)},
                                {"acc", format_double(res.final_test_acc)},
                                {"stm_ln", format_double(res.stm.headline)},
                                {"run_dir", res.run_dir}})
              << "\n";
    return 0;
}

int cmd_eval(const Invocation& inv) {
    RunConfig cfg = make_config(inv);
    Dataset test = load_split(cfg, "test");
    const std::string path =
        inv.checkpoint.empty() ? cfg.run_dir() + "/student.stck" : inv.checkpoint;
    Network student = load_network(path, student_arch(cfg));
    const int64_t T = cfg.eval_t > 0 ? cfg.eval_t : cfg.t_steps;
    EvalResult res = evaluate(student, test, T, cfg.lif_params(), cfg.batch);
    std::vector<std::pair<std::string, std::string>> rec = {
        {"kind", "eval"},
        {"checkpoint", path},
        {"T", std::to_string(T)},
        {"acc", format_double(res.accuracy)}};
    for (size_t k = 0; k < res.spike_rates.size(); ++k)
        rec.emplace_back("spike_rate_" + std::to_string(k), format_double(res.spike_rates[k]));
    std::cout << format_record(rec) << "\n";
    return 0;
}

int cmd_stm(const Invocation& inv) {
    RunConfig cfg = make_config(inv);
    Dataset train = load_split(cfg, "train");
    Dataset test = load_split(cfg, "test");
    Network teacher = obtain_teacher(cfg, train, test, /*train_if_missing=*/false);
    const std::string path =
        inv.checkpoint.empty() ? cfg.run_dir() + "/student.stck" : inv.checkpoint;
    Network student = load_network(path, student_arch(cfg));
    std::vector<int64_t> idx(static_cast<size_t>(std::min(cfg.batch, train.size())));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    Batch probe = gather_batch(train, idx);
    NoGradGuard ng;
    auto tf = forward_teacher(teacher, probe.images);
    auto sf = forward_student(student, probe.images, cfg.t_steps, cfg.lif_params());
    const auto pairing = cfg.stm_pairs(static_cast<int64_t>(student.arch.tap_shapes().size()),
                                       static_cast<int64_t>(teacher.arch.tap_shapes().size()));
    double raw = stm_score(sf.patterns, tf.pattern, pairing);
    std::cout << format_record(
                     {{"kind", "stm"},
                      {"checkpoint", path},
                      {"stm_raw", format_double(raw)},
                      {"stm_ln", format_double(raw > 0.0
                                                   ? std::log(raw)
                                                   : -std::numeric_limits<double>::infinity())}})
              << "\n";
    return 0;
}

void print_rows(const std::vector<TableRow>& rows, bool with_fraction) {
    std::vector<std::string> header = {"run"};
    if (with_fraction) header.push_back("fraction");
    header.push_back("acc");
    header.push_back("ln_stm");
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : rows) {
        std::vector<std::string> row = {r.label};
        if (with_fraction) row.push_back(format_double(r.fraction));
        char acc[32], stm[32];
        std::snprintf(acc, sizeof(acc), "%.4f", r.accuracy);
        std::snprintf(stm, sizeof(stm), "%.4f", r.stm_ln);
        row.push_back(acc);
        row.push_back(stm);
        cells.push_back(row);
    }
    std::cout << render_table(header, cells);
}

int cmd_ablate(const Invocation& inv) {
    RunConfig cfg = make_config(inv);
    print_rows(ablation_fixed_pairs(cfg), false);
    return 0;
}

int cmd_noisy(const Invocation& inv) {
    RunConfig cfg = make_config(inv);
    print_rows(noisy_label_suite(cfg), true);
    return 0;
}

int cmd_grad_check(const Invocation& inv) {
    int trials = 100;
    uint64_t seed = 1;
    if (!inv.positional.empty()) trials = static_cast<int>(std::stoll(inv.positional[0]));
    if (inv.positional.size() > 1) seed = std::stoull(inv.positional[1]);
    if (trials < 1) throw config_error("grad-check: trials must be >= 1");
    GradCheckReport rep = run_grad_check_suite(trials, seed);
    std::cout << format_record({{"kind", "grad-check"},
                                {"pass", rep.pass ? "true" : "false"},
                                {"checks", std::to_string(rep.checks)},
                                {"max_rel_err", format_double(rep.max_rel_err)},
                                {"worst", rep.worst.empty() ? "-" : rep.worst}})
              << "\n";
    return rep.pass ? 0 : 1;
}

int cmd_summary(const Invocation& inv) {
    std::vector<std::vector<std::string>> cells;
    std::ofstream rec;
    if (!inv.rec_path.empty()) {
        rec.open(inv.rec_path);
        if (!rec) throw io_error("cannot write " + inv.rec_path);
    }
    for (const auto& dir : inv.positional) {
        std::ifstream in(dir + "/summary.txt");
        std::string line;
        if (!in || !std::getline(in, line)) {
            cells.push_back({dir, "absent", "-", "-", "-", "-"});
            if (rec.is_open())
                rec << format_record({{"run", dir}, {"absent", "true"}}) << "\n";
            continue;
        }
        auto kv = parse_record(line);
        auto field = [&](const char* k) {
            auto it = kv.find(k);
            return it == kv.end() ? std::string("-") : it->second;
        };
        cells.push_back({dir, field("mode"), field("T"), field("seed"), field("acc"),
                         field("stm_ln")});
        if (rec.is_open()) {
            kv["run"] = dir;
            std::vector<std::pair<std::string, std::string>> fields(kv.begin(), kv.end());
            rec << format_record(fields) << "\n";
        }
    }
    std::cout << render_table({"run", "mode", "T", "seed", "accuracy", "ln_stm"}, cells);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    try {
        Invocation inv = parse_args(args);
        if (inv.help || inv.verb.empty()) {
            std::cout << kUsage;
            return inv.help || args.empty() ? 0 : 1;
        }
        if (inv.verb != "grad-check" && inv.verb != "summary" && !inv.positional.empty())
            throw config_error("unexpected argument '" + inv.positional[0] +
                               "' (overrides are key=value)");
        if (inv.verb == "gen-data") return cmd_gen_data(inv);
        if (inv.verb == "train-teacher") return cmd_train_teacher(inv);
        if (inv.verb == "distill") return cmd_distill(inv);
        if (inv.verb == "eval") return cmd_eval(inv);
        if (inv.verb == "stm") return cmd_stm(inv);
        if (inv.verb == "ablate-pairs") return cmd_ablate(inv);
        if (inv.verb == "noisy-suite") return cmd_noisy(inv);
        if (inv.verb == "grad-check") return cmd_grad_check(inv);
        if (inv.verb == "summary") return cmd_summary(inv);
        throw config_error("unknown verb '" + inv.verb + "'");
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.kind()) {
            case Error::Kind::io:
            case Error::Kind::runtime: return 2;
            default: return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace stcal
