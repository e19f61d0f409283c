#include "invdiff/pipeline.hpp"

#include "invdiff/dataset.hpp"
#include "invdiff/diffusion.hpp"
#include "invdiff/grouper.hpp"
#include "invdiff/invtrain.hpp"
#include "invdiff/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace invdiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kArtifactVersion = 1;

std::string p(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void need(const std::string& path, const std::string& stage) {
    if (!fs::exists(path))
        throw MissingArtifactError("missing artifact " + path +
                                   "; run '" + stage + "' first");
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot open " + path);
    out << j.dump() << "\n";
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError("cannot open " + path);
    json j;
    in >> j;
    return j;
}

NoiseSchedule schedule_of(const RunConfig& cfg) {
    return make_schedule(cfg.schedule.T, cfg.schedule.beta_min,
                         cfg.schedule.beta_max);
}

Matrix samples_from_json(const json& j) {
    const auto& rows = j.at("samples");
    if (rows.empty())
        return Matrix();
    Matrix m(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(rows.at(0).size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < rows.at(i).size(); ++k)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                rows.at(i).at(k).get<double>();
    return m;
}

json samples_to_json(const Matrix& m) {
    auto rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto row = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k)
            row.push_back(m(i, k));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

void stage_synth(const RunConfig& cfg, const std::string& run_dir) {
    fs::create_directories(run_dir);
    DatasetSplit split =
        make_split(cfg.dataset.n, cfg.dataset.n_test, cfg.dataset.rho,
                   cfg.dataset.sigma, cfg.dataset.seed);
    save_dataset(split.train, p(run_dir, "dataset.json"));
    save_dataset(split.test, p(run_dir, "test_dataset.json"));
}

void stage_pretrain(const RunConfig& cfg, const std::string& run_dir) {
    need(p(run_dir, "dataset.json"), "synth");
    BiasedDataset data = load_dataset(p(run_dir, "dataset.json"));
    NoiseSchedule sched = schedule_of(cfg);
    Denoiser den(static_cast<int>(data.d()), 2, sched.T, cfg.seed);
    PretrainConfig pc;
    pc.steps = cfg.pretrain.steps;
    pc.batch = cfg.pretrain.batch;
    pc.lr = cfg.pretrain.lr;
    pc.p_drop = cfg.pretrain.p_drop;
    pc.seed = cfg.seed;
    TrainStats stats = pretrain_biased(den, data, sched, pc);
    den.save(p(run_dir, "denoiser.json"));
    write_loss_curve(stats.loss_curve, p(run_dir, "pretrain_loss.csv"));
}

void stage_infer_groups(const RunConfig& cfg, const std::string& run_dir) {
    need(p(run_dir, "dataset.json"), "synth");
    need(p(run_dir, "denoiser.json"), "pretrain");
    BiasedDataset data = load_dataset(p(run_dir, "dataset.json"));
    Denoiser den = Denoiser::load(p(run_dir, "denoiser.json"));
    NoiseSchedule sched = schedule_of(cfg);
    PerSampleLoss psl =
        per_sample_loss(data, den, sched, cfg.grouper.M, cfg.seed);
    InferGroupsConfig gc;
    gc.E = cfg.grouper.E;
    gc.omega_disp = cfg.grouper.omega;
    gc.steps = cfg.grouper.steps;
    gc.lr = cfg.grouper.lr;
    gc.seed = cfg.seed;
    GroupAssignment ga = infer_groups(psl.values, gc);
    save_groups(ga, p(run_dir, "groups.json"), cfg.hash());

    json extra;
    extra["version"] = kArtifactVersion;
    extra["config_hash"] = cfg.hash();
    extra["seed"] = cfg.seed;
    extra["purity"] = group_alignment(ga, data.y, data.s);
    extra["J_final"] = ga.J_final;
    write_json(extra, p(run_dir, "groups_summary.json"));
}

void stage_train_guidance(const RunConfig& cfg, const std::string& run_dir,
                          bool harden) {
    need(p(run_dir, "dataset.json"), "synth");
    need(p(run_dir, "denoiser.json"), "pretrain");
    need(p(run_dir, "groups.json"), "infer-groups");
    BiasedDataset data = load_dataset(p(run_dir, "dataset.json"));
    Denoiser den = Denoiser::load(p(run_dir, "denoiser.json"));
    GroupAssignment ga = load_groups(p(run_dir, "groups.json"));
    NoiseSchedule sched = schedule_of(cfg);
    Guidance g(static_cast<int>(data.d()), 2, sched.T, cfg.invtrain.width,
               cfg.seed);
    InvTrainConfig tc;
    tc.delta = cfg.invtrain.delta;
    tc.lambda = cfg.invtrain.lambda;
    tc.steps = cfg.invtrain.steps;
    tc.batch = cfg.invtrain.batch;
    tc.lr = cfg.invtrain.lr;
    tc.seed = cfg.seed;
    tc.harden = harden;
    InvTrainStats stats = train_guidance(den, g, data, ga, sched, tc);
    g.save(p(run_dir, "guidance.json"));
    write_invtrain_log(stats, p(run_dir, "invtrain_log.csv"));

    json flag;
    flag["version"] = kArtifactVersion;
    flag["config_hash"] = cfg.hash();
    flag["seed"] = cfg.seed;
    flag["unstable"] = stats.unstable;
    flag["initial_var"] = stats.initial_var;
    flag["final_var"] = stats.final_var;
    write_json(flag, p(run_dir, "invtrain_status.json"));
}

void stage_sample(const RunConfig& cfg, const std::string& run_dir,
                  const std::string& model, int y, std::uint64_t seed) {
    need(p(run_dir, "denoiser.json"), "pretrain");
    Denoiser den = Denoiser::load(p(run_dir, "denoiser.json"));
    NoiseSchedule sched = schedule_of(cfg);
    Guidance g;
    Guidance* gp = nullptr;
    double delta = 0.0;
    if (model == "invdiff") {
        need(p(run_dir, "guidance.json"), "train-guidance");
        g = Guidance::load(p(run_dir, "guidance.json"));
        gp = &g;
        delta = cfg.invtrain.delta;
    } else if (model != "biased") {
        throw ConfigError("sample: model must be 'biased' or 'invdiff'");
    }
    Matrix x = sample(cfg.eval.samples_per_prompt, y, den, gp, delta, 0.0,
                      sched, seed);
    fs::create_directories(p(run_dir, "samples"));
    json j;
    j["version"] = kArtifactVersion;
    j["config_hash"] = cfg.hash();
    j["y"] = y;
    j["delta"] = delta;
    j["w_cfg"] = 0.0;
    j["seed"] = seed;
    j["model"] = model;
    j["samples"] = samples_to_json(x);
    write_json(j, p(run_dir, "samples/" + model + "_y" + std::to_string(y) +
                                 "_seed" + std::to_string(seed) + ".json"));
}

EvalReport stage_evaluate(const RunConfig& cfg, const std::string& run_dir,
                          const std::string& model) {
    need(p(run_dir, "denoiser.json"), "pretrain");
    need(p(run_dir, "test_dataset.json"), "synth");
    Denoiser den = Denoiser::load(p(run_dir, "denoiser.json"));
    BiasedDataset test = load_dataset(p(run_dir, "test_dataset.json"));
    NoiseSchedule sched = schedule_of(cfg);

    Guidance g;
    Guidance* gp = nullptr;
    double delta = 0.0;
    bool unstable = false;
    if (model == "invdiff") {
        need(p(run_dir, "guidance.json"), "train-guidance");
        g = Guidance::load(p(run_dir, "guidance.json"));
        gp = &g;
        delta = cfg.invtrain.delta;
        if (fs::exists(p(run_dir, "invtrain_status.json")))
            unstable = read_json(p(run_dir, "invtrain_status.json"))
                           .value("unstable", false);
    } else if (model != "biased") {
        throw ConfigError("evaluate: model must be 'biased' or 'invdiff'");
    }

    int n = cfg.eval.samples_per_prompt;
    std::vector<double> bias_per_seed;
    double fid = 0.0;
    Matrix all(2 * n * cfg.eval.seeds, den.d());
    Eigen::Index row = 0;
    for (int k = 0; k < cfg.eval.seeds; ++k) {
        std::uint64_t seed = cfg.seed + 1000 + static_cast<std::uint64_t>(k);
        double bias_sum = 0.0;
        for (int y = 0; y < 2; ++y) {
            Matrix x = sample(n, y, den, gp, delta, 0.0, sched,
                              seed ^ (static_cast<std::uint64_t>(y) << 32));
            bias_sum += bias_metric(x, 2, oracle_spurious);
            fid += fidelity(x, y);
            all.middleRows(row, n) = x;
            row += n;
        }
        bias_per_seed.push_back(bias_sum / 2.0);
    }
    fid /= static_cast<double>(2 * cfg.eval.seeds);

    EvalReport rep;
    rep.model = model;
    rep.unstable = unstable;
    double mean = 0.0;
    for (double b : bias_per_seed)
        mean += b;
    mean /= static_cast<double>(bias_per_seed.size());
    double var = 0.0;
    for (double b : bias_per_seed)
        var += (b - mean) * (b - mean);
    rep.bias_mean = mean;
    rep.bias_std = bias_per_seed.size() > 1
                       ? std::sqrt(var / (bias_per_seed.size() - 1))
                       : 0.0;
    rep.fidelity = fid;
    rep.frechet = frechet_lite(test.samples, all);
    rep.recall = knn_recall(test.samples, all, cfg.eval.k);

    json j;
    j["version"] = kArtifactVersion;
    j["config_hash"] = cfg.hash();
    j["seed"] = cfg.seed;
    j["model"] = model;
    j["bias_mean"] = rep.bias_mean;
    j["bias_std"] = rep.bias_std;
    j["frechet"] = rep.frechet;
    j["recall"] = rep.recall;
    j["fidelity"] = rep.fidelity;
    j["unstable"] = rep.unstable;
    j["config"] = json::parse(cfg.canonical());
    write_json(j, p(run_dir, "report_" + model + ".json"));
    return rep;
}

void stage_report(const std::vector<std::string>& run_dirs,
                  const std::string& csv_path) {
    std::ofstream out(csv_path);
    if (!out)
        throw std::runtime_error("report: cannot open " + csv_path);
    out << "run_id,model,delta,lambda,E,omega,bias_mean,bias_std,frechet,"
           "recall,fidelity\n";
    out.precision(17);
    int version_seen = -1;
    for (const std::string& dir : run_dirs) {
        for (const char* model : {"biased", "invdiff"}) {
            std::string path = p(dir, std::string("report_") + model +
                                          ".json");
            if (!fs::exists(path))
                continue;
            json j = read_json(path);
            int v = j.value("version", -1);
            if (version_seen == -1)
                version_seen = v;
            if (v != version_seen)
                throw std::runtime_error(
                    "report: mixed artifact versions under " + dir);
            const auto& c = j.at("config");
            out << fs::path(dir).filename().string() << ","
                << j.at("model").get<std::string>() << ","
                << c.at("invtrain").at("delta").get<double>() << ","
                << c.at("invtrain").at("lambda").get<double>() << ","
                << c.at("grouper").at("E").get<int>() << ","
                << c.at("grouper").at("omega").get<double>() << ","
                << j.at("bias_mean").get<double>() << ","
                << j.at("bias_std").get<double>() << ","
                << j.at("frechet").get<double>() << ","
                << j.at("recall").get<double>() << ","
                << j.at("fidelity").get<double>() << "\n";
        }
    }
}

void sweep(const RunConfig& base, const std::string& axis,
           const std::vector<double>& values, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::vector<std::string> dirs;
    for (double v : values) {
        RunConfig cfg = base;
        cfg.set_field(axis, v); // throws ConfigError for non-numeric axis
        std::ostringstream name;
        name << axis << "=" << v;
        std::string child = p(out_dir, name.str());
        run_all(cfg, child);
        dirs.push_back(child);
    }
    stage_report(dirs, p(out_dir, "sweep_summary.csv"));
}

void run_all(const RunConfig& cfg, const std::string& run_dir) {
    stage_synth(cfg, run_dir);
    stage_pretrain(cfg, run_dir);
    stage_infer_groups(cfg, run_dir);
    stage_train_guidance(cfg, run_dir);
    stage_evaluate(cfg, run_dir, "biased");
    stage_evaluate(cfg, run_dir, "invdiff");
    stage_report({run_dir}, p(run_dir, "summary.csv"));
}

} // namespace invdiff
