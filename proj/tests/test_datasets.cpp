#include "invdiff/dataset.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace invdiff;

TEST_CASE("noiseless limit puts samples at the class centers") {
    // sigma -> 0 approximated by a tiny sigma
    BiasedDataset ds = synthesize(64, 1.0, 1e-12, 9);
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        int y = ds.y[static_cast<std::size_t>(i)];
        CHECK(ds.s[static_cast<std::size_t>(i)] == y); // rho = 1
        Eigen::RowVectorXd expect(4);
        expect << (y == 0 ? -2.0 : 2.0), 0.0, 0.0, (y == 0 ? -2.0 : 2.0);
        CHECK((ds.samples.row(i) - expect).norm() < 1e-6);
    }
}

TEST_CASE("empirical P(s=y) concentrates near rho") {
    BiasedDataset ds = synthesize(4000, 0.95, 0.5, 123);
    double match = 0.0;
    for (std::size_t i = 0; i < ds.y.size(); ++i)
        match += ds.y[i] == ds.s[i] ? 1.0 : 0.0;
    match /= static_cast<double>(ds.n());
    CHECK(match >= 0.94);
    CHECK(match <= 0.96);
}

TEST_CASE("rho=0.5 gives four roughly equal groups") {
    int n = 4000;
    BiasedDataset ds = synthesize(n, 0.5, 0.5, 7);
    double counts[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < ds.y.size(); ++i)
        counts[ds.y[i]][ds.s[i]] += 1.0;
    double tol = 3.0 * std::sqrt(static_cast<double>(n));
    for (int y = 0; y < 2; ++y)
        for (int s = 0; s < 2; ++s)
            CHECK(std::abs(counts[y][s] - n / 4.0) <= tol);
}

TEST_CASE("n below 8 is rejected") {
    CHECK_THROWS_AS(synthesize(4, 0.5, 0.5, 1), std::invalid_argument);
}

TEST_CASE("synthesis is deterministic under the seed") {
    BiasedDataset a = synthesize(100, 0.8, 0.3, 42);
    BiasedDataset b = synthesize(100, 0.8, 0.3, 42);
    CHECK(a.samples == b.samples);
    CHECK(a.y == b.y);
    CHECK(a.s == b.s);
}

TEST_CASE("oracle classifiers") {
    Eigen::RowVectorXd x(4);
    x << 0, 0, 0, 2;
    CHECK(oracle_spurious(x) == 1);
    x << 0, 0, 0, -2;
    CHECK(oracle_spurious(x) == 0);
    x << 5, 5, 5, 0;
    CHECK(oracle_spurious(x) == 0); // tie rule
    x << 2, 0, 0, 0;
    CHECK(oracle_label(x) == 1);
    x << -2, 0, 0, 0;
    CHECK(oracle_label(x) == 0);
    x << 0, 9, 9, 9;
    CHECK(oracle_label(x) == 0); // tie rule
}

TEST_CASE("oracle accuracy at sigma=0.5 is essentially perfect") {
    BiasedDataset ds = synthesize(10000, 0.5, 0.5, 77);
    double label_ok = 0.0, spur_ok = 0.0;
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        if (oracle_label(ds.samples.row(i)) ==
            ds.y[static_cast<std::size_t>(i)])
            label_ok += 1.0;
        if (oracle_spurious(ds.samples.row(i)) ==
            ds.s[static_cast<std::size_t>(i)])
            spur_ok += 1.0;
    }
    CHECK(label_ok / static_cast<double>(ds.n()) >= 0.999);
    CHECK(spur_ok / static_cast<double>(ds.n()) >= 0.999);
}

TEST_CASE("invariant block is conditionally independent of s given y") {
    BiasedDataset ds = synthesize(10000, 0.95, 0.5, 5);
    for (int y = 0; y < 2; ++y) {
        for (int dim = 0; dim < 2; ++dim) {
            // correlation between x[dim] and s within class y
            std::vector<double> xs, ss;
            for (Eigen::Index i = 0; i < ds.n(); ++i) {
                if (ds.y[static_cast<std::size_t>(i)] != y)
                    continue;
                xs.push_back(ds.samples(i, dim));
                ss.push_back(ds.s[static_cast<std::size_t>(i)]);
            }
            double mx = 0, ms = 0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                mx += xs[i];
                ms += ss[i];
            }
            mx /= xs.size();
            ms /= ss.size();
            double cov = 0, vx = 0, vs = 0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                cov += (xs[i] - mx) * (ss[i] - ms);
                vx += (xs[i] - mx) * (xs[i] - mx);
                vs += (ss[i] - ms) * (ss[i] - ms);
            }
            double corr = cov / std::sqrt(vx * vs + 1e-30);
            CHECK(std::abs(corr) < 0.05);
        }
    }
}

TEST_CASE("dataset split: biased train, unbiased test, disjoint seeds") {
    DatasetSplit split = make_split(1000, 500, 0.9, 0.5, 3);
    CHECK(split.train.rho == 0.9);
    CHECK(split.test.rho == 0.5);
    CHECK(split.train.seed != split.test.seed);
}

TEST_CASE("save/load round-trip is bit-exact") {
    BiasedDataset ds = synthesize(16, 0.75, 0.4, 99);
    std::string path = "test_ds_roundtrip.json";
    save_dataset(ds, path);
    BiasedDataset back = load_dataset(path);
    CHECK(back.samples == ds.samples);
    CHECK(back.y == ds.y);
    CHECK(back.s == ds.s);
    CHECK(back.rho == ds.rho);
    CHECK(back.sigma == ds.sigma);
    CHECK(back.seed == ds.seed);
    std::remove(path.c_str());
}

TEST_CASE("truncated file is a format error, not a crash") {
    std::string path = "test_ds_truncated.json";
    {
        std::ofstream out(path);
        out << "{\"version\":1,\"n\":16,\"d\":4,\"rho\"";
    }
    CHECK_THROWS_AS(load_dataset(path), DatasetFormatError);
    std::remove(path.c_str());
}

TEST_CASE("version mismatch is an explicit version error") {
    std::string path = "test_ds_badversion.json";
    BiasedDataset ds = synthesize(16, 0.5, 0.5, 1);
    save_dataset(ds, path);
    // rewrite with a bumped version
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    auto pos = text.find("\"version\":1");
    text.replace(pos, 11, "\"version\":2");
    std::ofstream out(path);
    out << text;
    out.close();
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("version"),
                         DatasetFormatError);
    std::remove(path.c_str());
}
