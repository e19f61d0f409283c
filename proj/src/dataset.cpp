#include "invdiff/dataset.hpp"

#include "invdiff/rng.hpp"

#include <json.hpp>

#include <fstream>

namespace invdiff {

namespace {
constexpr int kDim = 4;
constexpr int kFormatVersion = 1;
} // namespace

BiasedDataset synthesize(int n, double rho, double sigma,
                         std::uint64_t seed) {
    if (n < 8)
        throw std::invalid_argument(
            "synthesize: n must be >= 8 (group counts degenerate)");
    if (rho < 0.0 || rho > 1.0)
        throw std::invalid_argument("synthesize: rho must be in [0,1]");
    if (!(sigma > 0.0))
        throw std::invalid_argument("synthesize: sigma must be > 0");

    Rng rng = Rng::stream(seed, "synthesize");
    BiasedDataset ds;
    ds.samples.resize(n, kDim);
    ds.y.resize(n);
    ds.s.resize(n);
    ds.rho = rho;
    ds.sigma = sigma;
    ds.seed = seed;

    for (int i = 0; i < n; ++i) {
        int y = rng.uniform() < 0.5 ? 0 : 1;
        int s = rng.uniform() < rho ? y : 1 - y;
        double cy = y == 0 ? -2.0 : 2.0;
        double dsp = s == 0 ? -2.0 : 2.0;
        ds.samples(i, 0) = cy + sigma * rng.normal();
        ds.samples(i, 1) = 0.0 + sigma * rng.normal();
        ds.samples(i, 2) = 0.0 + sigma * rng.normal();
        ds.samples(i, 3) = dsp + sigma * rng.normal();
        ds.y[i] = y;
        ds.s[i] = s;
    }
    return ds;
}

DatasetSplit make_split(int n_train, int n_test, double rho_train,
                        double sigma, std::uint64_t seed) {
    DatasetSplit split;
    split.train = synthesize(n_train, rho_train, sigma, seed);
    split.test = synthesize(n_test, 0.5, sigma, seed + 0x7e57ULL);
    return split;
}

int oracle_spurious(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    if (x.size() < 4)
        throw std::invalid_argument("oracle_spurious: needs D >= 4");
    return x[3] > 0.0 ? 1 : 0;
}

int oracle_label(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    if (x.size() < 2)
        throw std::invalid_argument("oracle_label: needs D >= 2");
    return x[0] > 0.0 ? 1 : 0;
}

void save_dataset(const BiasedDataset& ds, const std::string& path) {
    nlohmann::json j;
    j["version"] = kFormatVersion;
    j["n"] = ds.n();
    j["d"] = ds.d();
    j["rho"] = ds.rho;
    j["sigma"] = ds.sigma;
    j["seed"] = ds.seed;
    auto samples = nlohmann::json::array();
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        auto row = nlohmann::json::array();
        for (Eigen::Index k = 0; k < ds.d(); ++k)
            row.push_back(ds.samples(i, k));
        samples.push_back(std::move(row));
    }
    j["samples"] = std::move(samples);
    j["y"] = ds.y;
    j["s"] = ds.s;
    std::ofstream out(path);
    if (!out)
        throw DatasetFormatError("save_dataset: cannot open " + path);
    out << j.dump() << "\n";
}

BiasedDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw DatasetFormatError("load_dataset: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetFormatError("load_dataset: malformed file " + path +
                                 ": " + e.what());
    }
    if (!j.contains("version") || !j["version"].is_number_integer())
        throw DatasetFormatError("load_dataset: missing version field");
    if (j["version"].get<int>() != kFormatVersion)
        throw DatasetFormatError(
            "load_dataset: unsupported format version " +
            j["version"].dump() + " (expected " +
            std::to_string(kFormatVersion) + ")");
    try {
        BiasedDataset ds;
        int n = j.at("n").get<int>();
        int d = j.at("d").get<int>();
        ds.rho = j.at("rho").get<double>();
        ds.sigma = j.at("sigma").get<double>();
        ds.seed = j.at("seed").get<std::uint64_t>();
        const auto& samples = j.at("samples");
        if (static_cast<int>(samples.size()) != n)
            throw DatasetFormatError("load_dataset: sample count mismatch");
        ds.samples.resize(n, d);
        for (int i = 0; i < n; ++i) {
            const auto& row = samples.at(i);
            if (static_cast<int>(row.size()) != d)
                throw DatasetFormatError("load_dataset: row width mismatch");
            for (int k = 0; k < d; ++k)
                ds.samples(i, k) = row.at(k).get<double>();
        }
        ds.y = j.at("y").get<std::vector<int>>();
        ds.s = j.at("s").get<std::vector<int>>();
        if (static_cast<int>(ds.y.size()) != n ||
            static_cast<int>(ds.s.size()) != n)
            throw DatasetFormatError("load_dataset: label count mismatch");
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetFormatError("load_dataset: malformed file " + path +
                                 ": " + e.what());
    }
}

} // namespace invdiff
