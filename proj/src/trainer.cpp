#include "stcal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stcal/error.hpp"
#include "stcal/kernels.hpp"
#include "stcal/loss.hpp"
#include "stcal/optim.hpp"
#include "stcal/rng.hpp"
#include "stcal/serialize.hpp"

namespace fs = std::filesystem;

namespace stcal {

void apply_globals(const RunConfig& cfg) {
    set_precision(cfg.precision == "f32" ? Precision::f32 : Precision::f64);
    set_log_mode(cfg.log_mode == "strict" ? LogMode::strict : LogMode::lenient);
    if (cfg.threads > 0) kernels::set_max_threads(static_cast<int>(cfg.threads));
}

namespace {

ArchSpec arch_from(const RunConfig& cfg, const std::vector<int64_t>& channels,
                   const std::vector<bool>& taps) {
    ArchSpec arch;
    arch.in_channels = cfg.dataset_channels;
    arch.image_size = cfg.dataset_image_size;
    arch.classes = cfg.dataset_classes;
    for (size_t i = 0; i < channels.size(); ++i) arch.stages.push_back({channels[i], taps[i]});
    arch.validate();
    return arch;
}

std::string csv_channels(const ArchSpec& arch) {
    std::string out;
    for (const auto& st : arch.stages) {
        if (!out.empty()) out += ',';
        out += std::to_string(st.out_channels);
    }
    return out;
}

std::string csv_taps(const ArchSpec& arch) {
    std::string out;
    for (const auto& st : arch.stages) {
        if (!out.empty()) out += ',';
        out += st.tap ? '1' : '0';
    }
    return out;
}

std::vector<std::vector<double>> snapshot(const std::vector<TensorPtr>& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p->data);
    return out;
}

void restore(const std::vector<TensorPtr>& params, const std::vector<std::vector<double>>& snap) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->data = snap[i];
}

int64_t count_hits(const TensorPtr& logits, const std::vector<int64_t>& labels) {
    return std::llround(top1_accuracy(logits, labels) * static_cast<double>(labels.size()));
}

OptimizerSpec optimizer_spec(const RunConfig& cfg, int64_t total_steps) {
    OptimizerSpec spec;
    spec.kind = cfg.opt_kind;
    spec.lr = cfg.opt_lr;
    spec.momentum = cfg.opt_momentum;
    spec.beta1 = cfg.opt_beta1;
    spec.beta2 = cfg.opt_beta2;
    spec.weight_decay = cfg.opt_weight_decay;
    spec.cosine = cfg.opt_cosine;
    spec.total_steps = total_steps;
    return spec;
}

void ensure_parent_dir(const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void check_finite(double v, const char* component, int64_t epoch, int64_t batch) {
    if (!std::isfinite(v))
        throw runtime_error(std::string("NaN in ") + component + " at epoch " +
                            std::to_string(epoch) + " batch " + std::to_string(batch));
}

}  // namespace

ArchSpec teacher_arch(const RunConfig& cfg) {
    return arch_from(cfg, cfg.teacher_channel_list(), cfg.teacher_tap_list());
}

ArchSpec student_arch(const RunConfig& cfg) {
    return arch_from(cfg, cfg.student_channel_list(), cfg.student_tap_list());
}

uint64_t derive_seed(uint64_t base, uint64_t tag) {
    Rng root(base);
    Rng branch = root.fork(tag);
    return branch.next_u64();
}

Dataset load_split(const RunConfig& cfg, const std::string& split) {
    if (split != "train" && split != "test")
        throw contract_error("load_split: unknown split '" + split + "'");
    const uint64_t tag = split == "train" ? 0 : 1;
    if (cfg.dataset_source == "synth") {
        SynthSpec spec;
        spec.classes = cfg.dataset_classes;
        spec.per_class =
            split == "train" ? cfg.dataset_per_class_train : cfg.dataset_per_class_test;
        spec.image_size = cfg.dataset_image_size;
        spec.channels = cfg.dataset_channels;
        spec.noise_sigma = cfg.dataset_noise_sigma;
        return synth_generate(spec, derive_seed(cfg.seed_data, tag),
                              derive_seed(cfg.seed_noise, tag), split);
    }
    const std::string stem = cfg.dataset_path + "/" + split;
    Dataset ds = cfg.dataset_source == "idx"
                     ? load_idx(stem + "-images.idx", stem + "-labels.idx")
                     : load_raw(stem + "-images.stns", stem + "-labels.stlb");
    ds.classes = cfg.dataset_classes;
    ds.split = split;
    ds.validate();
    return ds;
}

std::string teacher_checkpoint_path(const RunConfig& cfg) {
    if (!cfg.teacher_checkpoint.empty()) return cfg.teacher_checkpoint;
    return cfg.resolved_out_root() + "/teacher.stck";
}

void save_network(const std::string& path, const Network& net,
                  std::vector<std::pair<std::string, std::string>> meta) {
    Checkpoint ck;
    meta.emplace_back("arch.in_channels", std::to_string(net.arch.in_channels));
    meta.emplace_back("arch.image_size", std::to_string(net.arch.image_size));
    meta.emplace_back("arch.classes", std::to_string(net.arch.classes));
    meta.emplace_back("arch.channels", csv_channels(net.arch));
    meta.emplace_back("arch.taps", csv_taps(net.arch));
    ck.meta = std::move(meta);
    auto names = net.param_names("net");
    auto params = net.params();
    for (size_t i = 0; i < params.size(); ++i) ck.tensors.emplace_back(names[i], params[i]);
    ensure_parent_dir(path);
    save_checkpoint(path, ck);
}

Network load_network(const std::string& path, const ArchSpec& expected) {
    Checkpoint ck = load_checkpoint(path);
    auto expect_meta = [&](const std::string& key, const std::string& want) {
        std::string got = ck.meta_value(key);
        if (got != want)
            throw io_error("checkpoint " + path + ": " + key + " is '" + got + "', expected '" +
                           want + "'");
    };
    expect_meta("arch.in_channels", std::to_string(expected.in_channels));
    expect_meta("arch.image_size", std::to_string(expected.image_size));
    expect_meta("arch.classes", std::to_string(expected.classes));
    expect_meta("arch.channels", csv_channels(expected));
    expect_meta("arch.taps", csv_taps(expected));
    Network net;
    net.arch = expected;
    auto want = [&](const std::string& name) -> TensorPtr {
        const TensorPtr* t = ck.find(name);
        if (!t) throw io_error("checkpoint " + path + ": missing tensor '" + name + "'");
        return *t;
    };
    for (size_t i = 0; i < expected.stages.size(); ++i) {
        net.conv_w.push_back(want("net.conv" + std::to_string(i + 1) + ".w"));
        net.conv_b.push_back(want("net.conv" + std::to_string(i + 1) + ".b"));
    }
    net.fc_w = want("net.fc.w");
    net.fc_b = want("net.fc.b");
    return net;
}

namespace {

double dataset_accuracy(const Network& net, const Dataset& ds, int64_t batch) {
    NoGradGuard ng;
    int64_t hits = 0;
    for (int64_t start = 0; start < ds.size(); start += batch) {
        std::vector<int64_t> idx;
        for (int64_t i = start; i < std::min(start + batch, ds.size()); ++i) idx.push_back(i);
        Batch bt = gather_batch(ds, idx);
        hits += count_hits(forward_teacher(net, bt.images).logits, bt.labels);
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

}  // namespace

TeacherResult train_teacher(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                            const std::string& ckpt_path) {
    cfg.validate();
    apply_globals(cfg);
    Rng root(cfg.seed_init);
    Rng init_rng = root.fork(0);
    Network net = build_network(teacher_arch(cfg), init_rng);

    const int64_t n = train.size();
    BatchPlan plan{cfg.batch, derive_seed(cfg.seed_data, 2), /*drop_last=*/false};
    const int64_t steps_per_epoch = static_cast<int64_t>(make_batches(n, plan, 0).size());
    Optimizer opt(net.params(), optimizer_spec(cfg, cfg.teacher_epochs * steps_per_epoch));

    ensure_parent_dir(ckpt_path);
    std::ofstream log(ckpt_path + ".log");
    if (!log) throw io_error("cannot write " + ckpt_path + ".log");

    auto last_good = snapshot(net.params());
    TeacherResult res;
    for (int64_t e = 0; e < cfg.teacher_epochs; ++e) {
        int64_t hits = 0;
        auto batches = make_batches(n, plan, e);
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            Batch bt = gather_batch(train, batches[bi]);
            auto tf = forward_teacher(net, bt.images);
            auto l = ce_loss(tf.logits, bt.labels);
            if (!std::isfinite(l->item())) {
                restore(net.params(), last_good);
                save_network(ckpt_path, net,
                             {{"kind", "teacher"},
                              {"diverged_at", std::to_string(e) + ":" + std::to_string(bi)}});
                throw runtime_error("teacher loss diverged at epoch " + std::to_string(e) +
                                    " batch " + std::to_string(bi) +
                                    "; last-good checkpoint saved to " + ckpt_path);
            }
            double lr = opt.current_lr();
            opt.zero_grad();
            backward(l);
            opt.step();
            hits += count_hits(tf.logits, bt.labels);
            log << format_record({{"kind", "step"},
                                  {"epoch", std::to_string(e)},
                                  {"batch", std::to_string(bi)},
                                  {"l_ce", format_double(l->item())},
                                  {"lr", format_double(lr)}})
                << "\n";
        }
        res.final_train_acc = static_cast<double>(hits) / static_cast<double>(n);
        res.final_test_acc = dataset_accuracy(net, test, cfg.batch);
        res.epochs_run = e + 1;
        last_good = snapshot(net.params());
        log << format_record({{"kind", "epoch"},
                              {"epoch", std::to_string(e)},
                              {"train_acc", format_double(res.final_train_acc)},
                              {"test_acc", format_double(res.final_test_acc)}})
            << "\n";
    }
    save_network(ckpt_path, net,
                 {{"kind", "teacher"},
                  {"train_acc", format_double(res.final_train_acc)},
                  {"test_acc", format_double(res.final_test_acc)}});
    res.net = net;
    return res;
}

Network obtain_teacher(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                       bool train_if_missing) {
    const std::string path = teacher_checkpoint_path(cfg);
    if (fs::exists(path)) return load_network(path, teacher_arch(cfg));
    if (!train_if_missing) throw io_error("teacher checkpoint not found: " + path);
    return train_teacher(cfg, train, test, path).net;
}

namespace {

// constant eta table for feature_kd: 1/T on configured pairs, 0 elsewhere
std::vector<std::vector<TensorPtr>> fixed_eta(int64_t b, int64_t t_steps,
                                              const std::vector<int64_t>& s_ids,
                                              const std::vector<int64_t>& a_ids,
                                              const LayerPairing& pairs) {
    std::vector<TensorPtr> per_s(s_ids.size());
    for (size_t si = 0; si < s_ids.size(); ++si) {
        std::vector<double> row(static_cast<size_t>(b) * a_ids.size(), 0.0);
        for (size_t ai = 0; ai < a_ids.size(); ++ai) {
            bool on = false;
            for (const auto& [s, a] : pairs)
                if (s == s_ids[si] && a == a_ids[ai]) on = true;
            if (on)
                for (int64_t i = 0; i < b; ++i)
                    row[static_cast<size_t>(i) * a_ids.size() + ai] =
                        1.0 / static_cast<double>(t_steps);
        }
        per_s[si] = make_tensor({b, static_cast<int64_t>(a_ids.size())}, std::move(row), false);
    }
    std::vector<std::vector<TensorPtr>> eta(static_cast<size_t>(t_steps), per_s);
    return eta;
}

std::vector<int64_t> distinct_sorted(const LayerPairing& pairs, bool first) {
    std::vector<int64_t> out;
    for (const auto& [s, a] : pairs) out.push_back(first ? s : a);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

DistillResult distill(const RunConfig& cfg, const Network& teacher, const Dataset& train,
                      const Dataset& test) {
    cfg.validate();
    apply_globals(cfg);
    const Mode mode = cfg.mode_enum();
    const int64_t n = train.size();
    const int64_t b = cfg.batch;
    const int64_t T = cfg.t_steps;
    if (b > n)
        throw domain_error("b=" + std::to_string(b) + " exceeds training set size " +
                           std::to_string(n));
    const LifParams lif = cfg.lif_params();

    Rng root(cfg.seed_init);
    Rng student_rng = root.fork(1);
    Rng calib_rng = root.fork(2);
    Network student = build_network(student_arch(cfg), student_rng);
    const auto s_taps = student.arch.tap_shapes();
    const auto a_taps = teacher.arch.tap_shapes();

    std::optional<CalibrationBank> bank;
    LayerPairing feature_pairs;
    std::vector<int64_t> s_ids, a_ids;
    if (mode == Mode::feature_kd || mode == Mode::sastc) {
        QkDims qk{cfg.qk_d_h, cfg.qk_d_k, cfg.qk_per_layer};
        bank = build_bank(b, qk, s_taps, a_taps, calib_rng);
    }
    if (mode == Mode::feature_kd) {
        feature_pairs = cfg.feature_pairs();
        for (const auto& [s, a] : feature_pairs)
            if (s < 0 || s >= static_cast<int64_t>(s_taps.size()) || a < 0 ||
                a >= static_cast<int64_t>(a_taps.size()))
                throw config_error("pairs.feature_kd: pair " + std::to_string(s) + ":" +
                                   std::to_string(a) + " outside tap tables");
        s_ids = distinct_sorted(feature_pairs, true);
        a_ids = distinct_sorted(feature_pairs, false);
    }
    const LayerPairing stm_pairing = cfg.stm_pairs(static_cast<int64_t>(s_taps.size()),
                                                   static_cast<int64_t>(a_taps.size()));

    const std::string dir = cfg.run_dir();
    fs::create_directories(dir);
    {
        std::ofstream echo(dir + "/config.cfg");
        if (!echo) throw io_error("cannot write " + dir + "/config.cfg");
        echo << cfg.echo();
    }
    std::ofstream log(dir + "/metrics.log");
    if (!log) throw io_error("cannot write " + dir + "/metrics.log");

    BatchPlan plan{b, derive_seed(cfg.seed_data, 3), /*drop_last=*/true};
    const int64_t steps_per_epoch = n / b;
    std::vector<TensorPtr> opt_params = student.params();
    if (bank)
        for (const auto& p : bank->params()) opt_params.push_back(p);
    Optimizer opt(opt_params, optimizer_spec(cfg, cfg.epochs * steps_per_epoch));

    std::vector<int64_t> probe_idx(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) probe_idx[static_cast<size_t>(i)] = i;
    const Batch probe = gather_batch(train, probe_idx);
    TeacherForward tf_probe;
    {
        NoGradGuard ng;
        tf_probe = forward_teacher(teacher, probe.images);
    }

    auto fixed_etas =
        mode == Mode::feature_kd ? fixed_eta(b, T, s_ids, a_ids, feature_pairs)
                                 : std::vector<std::vector<TensorPtr>>{};

    DistillResult res;
    res.run_dir = dir;
    for (int64_t e = 0; e < cfg.epochs; ++e) {
        int64_t hits = 0;
        auto batches = make_batches(n, plan, e);
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            Batch bt = gather_batch(train, batches[bi]);
            TeacherForward tf;
            {
                NoGradGuard ng;
                tf = forward_teacher(teacher, bt.images);
            }
            StudentForward sf = forward_student(student, bt.images, T, lif);

            LossBreakdown lb;
            lb.alpha = cfg.alpha;
            lb.beta = cfg.beta;
            if (mode == Mode::baseline) {
                lb.l_ce = ce_loss(sf.logits, bt.labels);
                lb.l_kl = scalar(0.0);
                lb.l_kd = lb.l_ce;
                lb.l_sastc = scalar(0.0);
                lb.l_total = lb.l_ce;
            } else {
                KdParts parts = kd_loss(sf.logits, tf.logits, bt.labels, cfg.alpha);
                lb.l_ce = parts.l_ce;
                lb.l_kl = parts.l_kl;
                lb.l_kd = parts.l_kd;
                if (mode == Mode::kd) {
                    lb.l_sastc = scalar(0.0);
                    lb.l_total = total_loss(lb.l_kd, lb.l_sastc, cfg.beta);
                } else if (mode == Mode::feature_kd) {
                    std::vector<TensorPtr> maps;
                    for (int64_t a : a_ids) {
                        auto m = tf.pattern[static_cast<size_t>(a)];
                        maps.push_back(cfg.loss_similarity_space ? similarity_matrix(m) : m);
                    }
                    std::vector<std::vector<std::vector<TensorPtr>>> projected(
                        static_cast<size_t>(T));
                    for (int64_t t = 0; t < T; ++t) {
                        projected[static_cast<size_t>(t)].resize(s_ids.size());
                        for (size_t si = 0; si < s_ids.size(); ++si)
                            for (int64_t a : a_ids) {
                                auto pr = bank->projectors[static_cast<size_t>(s_ids[si])]
                                                          [static_cast<size_t>(a)]
                                              .apply(sf.patterns[static_cast<size_t>(t)]
                                                                [static_cast<size_t>(s_ids[si])]);
                                projected[static_cast<size_t>(t)][si].push_back(
                                    cfg.loss_similarity_space ? similarity_matrix(pr) : pr);
                            }
                    }
                    lb.l_sastc = sastc_loss(fixed_etas, maps, projected, cfg.loss_batch_mean);
                    lb.l_total = total_loss(lb.l_kd, lb.l_sastc, cfg.beta);
                } else {
                    CalibrationResult calib = calibrate(*bank, sf.patterns, tf.pattern);
                    std::vector<TensorPtr> maps =
                        cfg.loss_similarity_space ? calib.sim_teacher : tf.pattern;
                    const auto* projected = &calib.projected;
                    std::vector<std::vector<std::vector<TensorPtr>>> sim_projected;
                    if (cfg.loss_similarity_space) {
                        sim_projected.resize(calib.projected.size());
                        for (size_t t = 0; t < calib.projected.size(); ++t) {
                            sim_projected[t].resize(calib.projected[t].size());
                            for (size_t s = 0; s < calib.projected[t].size(); ++s)
                                for (const auto& pr : calib.projected[t][s])
                                    sim_projected[t][s].push_back(similarity_matrix(pr));
                        }
                        projected = &sim_projected;
                    }
                    lb.l_sastc = sastc_loss(calib.eta, maps, *projected, cfg.loss_batch_mean);
                    lb.l_total = total_loss(lb.l_kd, lb.l_sastc, cfg.beta);
                    if (cfg.dump_calibration && e == 0 && bi == 0) {
                        std::ofstream dump(dir + "/calib_dump.log");
                        for (size_t t = 0; t < calib.eta.size(); ++t)
                            for (size_t s = 0; s < calib.eta[t].size(); ++s) {
                                const auto& eta = calib.eta[t][s];
                                for (int64_t a = 0; a < eta->shape[1]; ++a) {
                                    double mean = 0.0;
                                    for (int64_t i = 0; i < eta->shape[0]; ++i)
                                        mean += eta->data[static_cast<size_t>(i * eta->shape[1] +
                                                                              a)];
                                    mean /= static_cast<double>(eta->shape[0]);
                                    dump << format_record(
                                                {{"t", std::to_string(t)},
                                                 {"s", std::to_string(s)},
                                                 {"a", std::to_string(a)},
                                                 {"eta_mean", format_double(mean)}})
                                         << "\n";
                                }
                            }
                    }
                }
            }

            const int64_t eno = e, bno = static_cast<int64_t>(bi);
            check_finite(lb.l_total->item(), "l_total", eno, bno);
            check_finite(lb.l_kd->item(), "l_kd", eno, bno);
            check_finite(lb.l_ce->item(), "l_ce", eno, bno);
            check_finite(lb.l_kl->item(), "l_kl", eno, bno);
            check_finite(lb.l_sastc->item(), "l_sastc", eno, bno);

            double lr = opt.current_lr();
            opt.zero_grad();
            backward(lb.l_total);
            opt.step();
            hits += count_hits(sf.logits, bt.labels);
            log << format_record({{"kind", "step"},
                                  {"epoch", std::to_string(e)},
                                  {"batch", std::to_string(bi)},
                                  {"l_total", format_double(lb.l_total->item())},
                                  {"l_kd", format_double(lb.l_kd->item())},
                                  {"l_ce", format_double(lb.l_ce->item())},
                                  {"l_kl", format_double(lb.l_kl->item())},
                                  {"l_sastc", format_double(lb.l_sastc->item())},
                                  {"alpha", format_double(lb.alpha)},
                                  {"beta", format_double(lb.beta)},
                                  {"lr", format_double(lr)}})
                << "\n";
        }
        res.final_train_acc = static_cast<double>(hits) / static_cast<double>(steps_per_epoch * b);

        StudentForward sf_probe;
        {
            NoGradGuard ng;
            sf_probe = forward_student(student, probe.images, T, lif, /*keep_spikes=*/true);
        }
        double stm_raw = stm_score(sf_probe.patterns, tf_probe.pattern, stm_pairing);
        res.stm_raw.push_back(stm_raw);
        EvalResult ev = evaluate(student, test, T, lif, b);
        res.test_acc.push_back(ev.accuracy);

        std::vector<std::pair<std::string, std::string>> rec = {
            {"kind", "epoch"},
            {"epoch", std::to_string(e)},
            {"train_acc", format_double(res.final_train_acc)},
            {"test_acc", format_double(ev.accuracy)},
            {"stm_raw", format_double(stm_raw)},
            {"stm_ln",
             format_double(stm_raw > 0.0 ? std::log(stm_raw)
                                         : -std::numeric_limits<double>::infinity())}};
        for (size_t k = 0; k < sf_probe.spikes.size(); ++k)
            rec.emplace_back("spike_rate_" + std::to_string(k),
                             format_double(spike_rate(sf_probe.spikes[k])));
        log << format_record(rec) << "\n";
    }

    res.stm = stm_epoch_report(res.stm_raw, cfg.stm_window);
    res.final_test_acc = res.test_acc.back();
    res.student = student;
    res.bank = bank;

    std::vector<std::pair<std::string, std::string>> meta = {
        {"kind", "student"},
        {"mode", cfg.mode},
        {"T", std::to_string(T)},
        {"test_acc", format_double(res.final_test_acc)},
        {"stm_ln", format_double(res.stm.headline)}};
    if (cfg.checkpoint_include_calibration && bank) {
        Checkpoint ck;
        ck.meta = meta;
        ck.meta.emplace_back("arch.in_channels", std::to_string(student.arch.in_channels));
        ck.meta.emplace_back("arch.image_size", std::to_string(student.arch.image_size));
        ck.meta.emplace_back("arch.classes", std::to_string(student.arch.classes));
        ck.meta.emplace_back("arch.channels", csv_channels(student.arch));
        ck.meta.emplace_back("arch.taps", csv_taps(student.arch));
        ck.meta.emplace_back("calib.included", "true");
        auto names = student.param_names("net");
        auto params = student.params();
        for (size_t i = 0; i < params.size(); ++i) ck.tensors.emplace_back(names[i], params[i]);
        auto cnames = bank->param_names();
        auto cparams = bank->params();
        for (size_t i = 0; i < cparams.size(); ++i)
            ck.tensors.emplace_back(cnames[i], cparams[i]);
        save_checkpoint(dir + "/student.stck", ck);
    } else {
        save_network(dir + "/student.stck", student, meta);
    }

    std::ofstream summary(dir + "/summary.txt");
    if (!summary) throw io_error("cannot write " + dir + "/summary.txt");
    summary << format_record({{"mode", cfg.mode},
                              {"T", std::to_string(T)},
                              {"seed", std::to_string(cfg.seed_init)},
                              {"epochs", std::to_string(cfg.epochs)},
                              {"acc", format_double(res.final_test_acc)},
                              {"stm_ln", format_double(res.stm.headline)},
                              {"stm_raw_final", format_double(res.stm_raw.back())}})
            << "\n";
    return res;
}

EvalResult evaluate(const Network& student, const Dataset& ds, int64_t t_steps,
                    const LifParams& lif, int64_t batch) {
    if (t_steps < 1) throw domain_error("evaluate: T must be >= 1");
    if (batch < 1) throw domain_error("evaluate: batch must be >= 1");
    NoGradGuard ng;
    EvalResult res;
    const size_t stages = student.arch.stages.size();
    std::vector<double> ones(stages, 0.0), counts(stages, 0.0);
    int64_t hits = 0;
    for (int64_t start = 0; start < ds.size(); start += batch) {
        std::vector<int64_t> idx;
        for (int64_t i = start; i < std::min(start + batch, ds.size()); ++i) idx.push_back(i);
        Batch bt = gather_batch(ds, idx);
        StudentForward sf = forward_student(student, bt.images, t_steps, lif, /*keep_spikes=*/true);
        hits += count_hits(sf.logits, bt.labels);
        for (size_t k = 0; k < stages; ++k)
            for (const auto& sp : sf.spikes[k]) {
                for (double v : sp->data) ones[k] += v;
                counts[k] += static_cast<double>(sp->data.size());
            }
    }
    res.accuracy = static_cast<double>(hits) / static_cast<double>(ds.size());
    for (size_t k = 0; k < stages; ++k) res.spike_rates.push_back(ones[k] / counts[k]);
    return res;
}

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> width(header.size());
    for (size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : rows)
        for (size_t c = 0; c < row.size() && c < width.size(); ++c)
            width[c] = std::max(width[c], row[c].size());
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (size_t c = 0; c < width.size(); ++c) {
            std::string cell = c < row.size() ? row[c] : "";
            out << cell << std::string(width[c] - cell.size(), ' ');
            out << (c + 1 < width.size() ? "  " : "");
        }
        out << "\n";
    };
    emit(header);
    for (const auto& row : rows) emit(row);
    return out.str();
}

namespace {

std::string fmt_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

void write_table_files(const std::string& stem, const std::vector<std::string>& header,
                       const std::vector<TableRow>& rows, bool with_fraction) {
    std::vector<std::vector<std::string>> cells;
    std::ofstream rec(stem + ".rec");
    if (!rec) throw io_error("cannot write " + stem + ".rec");
    for (const auto& r : rows) {
        std::vector<std::string> row = {r.label};
        std::vector<std::pair<std::string, std::string>> fields = {{"run", r.label}};
        if (with_fraction) {
            row.push_back(format_double(r.fraction));
            fields.emplace_back("fraction", format_double(r.fraction));
        }
        row.push_back(fmt_acc(r.accuracy));
        row.push_back(fmt_acc(r.stm_ln));
        fields.emplace_back("acc", format_double(r.accuracy));
        fields.emplace_back("stm_ln", format_double(r.stm_ln));
        cells.push_back(row);
        rec << format_record(fields) << "\n";
    }
    std::ofstream txt(stem + ".txt");
    if (!txt) throw io_error("cannot write " + stem + ".txt");
    txt << render_table(header, cells);
}

}  // namespace

std::vector<TableRow> ablation_fixed_pairs(const RunConfig& cfg) {
    cfg.validate();
    apply_globals(cfg);
    Dataset train = load_split(cfg, "train");
    Dataset test = load_split(cfg, "test");
    Network teacher = obtain_teacher(cfg, train, test, /*train_if_missing=*/true);
    const int64_t s_count = static_cast<int64_t>(student_arch(cfg).tap_shapes().size());
    const int64_t a_count = static_cast<int64_t>(teacher.arch.tap_shapes().size());
    const std::string base = cfg.run_name.empty() ? "ablate" : cfg.run_name;

    std::vector<TableRow> rows;
    for (int64_t s = 0; s < s_count; ++s)
        for (int64_t a = 0; a < a_count; ++a) {
            RunConfig sub = cfg;
            sub.mode = "feature_kd";
            sub.pairs_feature_kd = std::to_string(s) + ":" + std::to_string(a);
            sub.run_name = base + "_pair_" + std::to_string(s) + "_" + std::to_string(a);
            DistillResult r = distill(sub, teacher, train, test);
            rows.push_back({"pair_" + std::to_string(s) + ":" + std::to_string(a), 0.0,
                            r.final_test_acc, r.stm.headline});
        }
    for (const char* ref : {"kd", "sastc"}) {
        RunConfig sub = cfg;
        sub.mode = ref;
        sub.pairs_feature_kd.clear();
        sub.run_name = base + "_" + ref;
        DistillResult r = distill(sub, teacher, train, test);
        rows.push_back({ref, 0.0, r.final_test_acc, r.stm.headline});
    }
    write_table_files(cfg.resolved_out_root() + "/" + base + "_table", {"run", "acc", "ln_stm"},
                      rows, /*with_fraction=*/false);
    return rows;
}

std::vector<TableRow> noisy_label_suite(const RunConfig& cfg) {
    cfg.validate();
    apply_globals(cfg);
    Dataset train = load_split(cfg, "train");
    Dataset test = load_split(cfg, "test");
    Network teacher = obtain_teacher(cfg, train, test, /*train_if_missing=*/true);
    const std::string base = cfg.run_name.empty() ? "noisy" : cfg.run_name;
    const auto fractions = cfg.noisy_fraction_list();
    const auto modes = cfg.noisy_mode_list();

    std::vector<TableRow> rows;
    for (size_t i = 0; i < fractions.size(); ++i) {
        const double p = fractions[i];
        Dataset noisy =
            p == 0.0 ? train : corrupt_labels(train, p, derive_seed(cfg.seed_noise, 11 + i));
        Network teacher_p = teacher;
        if (cfg.noisy_retrain_teacher && p > 0.0) {
            RunConfig tcfg = cfg;
            tcfg.teacher_checkpoint = cfg.resolved_out_root() + "/" + base + "_teacher_p" +
                                      std::to_string(i) + ".stck";
            teacher_p = train_teacher(tcfg, noisy, test, tcfg.teacher_checkpoint).net;
        }
        for (const auto& m : modes) {
            RunConfig sub = cfg;
            sub.mode = m;
            sub.run_name = base + "_p" + std::to_string(i) + "_" + m;
            DistillResult r = distill(sub, teacher_p, noisy, test);
            rows.push_back({m, p, r.final_test_acc, r.stm.headline});
        }
    }
    write_table_files(cfg.resolved_out_root() + "/" + base + "_table",
                      {"run", "fraction", "acc", "ln_stm"}, rows, /*with_fraction=*/true);
    return rows;
}

}  // namespace stcal
