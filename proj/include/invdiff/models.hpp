#pragma once

#include "invdiff/rng.hpp"
#include "invdiff/tape.hpp"

#include <optional>
#include <string>
#include <vector>

namespace invdiff {

// Sinusoidal timestep features: 8 log-spaced frequency pairs over
// [1/T, 1], giving 16 dims per timestep. Rows are injective over {1..T}.
class TimeEmbedding {
public:
    static constexpr int kPairs = 8;
    static constexpr int kDim = 2 * kPairs;

    explicit TimeEmbedding(int t_max);

    // 1-based timestep -> 1 x kDim row
    Eigen::RowVectorXd row(int t) const;
    Matrix rows(const std::vector<int>& t) const;
    int t_max() const { return t_max_; }

private:
    int t_max_ = 0;
    Matrix table_; // t_max x kDim
};

// Sentinel condition index meaning "no label" (classifier-free branch).
inline constexpr int kNullLabel = -1;

struct MlpSpec {
    int in = 0;
    std::vector<int> hidden;
    int out = 0;
};

// SiLU MLP with zero-initialized final layer so a fresh network outputs
// exactly zero; hidden layers use uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
struct Mlp {
    MlpSpec spec;
    std::vector<Param> weights;
    std::vector<Param> biases;

    Mlp() = default;
    Mlp(const MlpSpec& s, const std::string& prefix, Rng& rng);

    Var forward(Tape& tape, Var input);
    std::vector<Param*> params();
    long param_count() const;
};

// Conditional noise predictor eps(x_t, t, y). Input is
// concat(x_t, time_emb, label_emb); the embedding table has K_y + 1 rows,
// the extra row standing for the null label. The null path reads only this
// table, never the guidance-side encoder.
class Denoiser {
public:
    static constexpr int kLabelEmbDim = 8;

    Denoiser() = default;
    Denoiser(int d, int k_y, int t_max, std::uint64_t init_seed);

    // y entries in {0..k_y-1} or kNullLabel
    Var predict(Tape& tape, Var x_t, const std::vector<int>& t,
                const std::vector<int>& y);
    Matrix predict_value(const Matrix& x_t, const std::vector<int>& t,
                         const std::vector<int>& y);

    std::vector<Param*> params();
    int d() const { return d_; }
    int k_y() const { return k_y_; }
    int t_max() const { return emb_ ? emb_->t_max() : 0; }

    void save(const std::string& path) const;
    static Denoiser load(const std::string& path);

private:
    int d_ = 0;
    int k_y_ = 0;
    std::optional<TimeEmbedding> emb_;
    Param label_emb_{"denoiser.label_emb", Matrix()};
    Mlp net_;

    std::vector<int> emb_index(const std::vector<int>& y) const;
};

// Label encoder Phi(y): K_y x 8 table trained jointly with the guidance net.
class LabelEncoder {
public:
    static constexpr int kDim = 8;

    LabelEncoder() = default;
    LabelEncoder(int k_y, std::uint64_t init_seed);

    Var encode(Tape& tape, const std::vector<int>& y);
    Param& table() { return table_; }
    const Param& table() const { return table_; }
    int k_y() const { return k_y_; }

private:
    int k_y_ = 0;
    Param table_{"phi.table", Matrix()};
};

// Lightweight guidance network G(x_t, Phi(y), t) with a single hidden layer
// of configurable width (the parameter-count knob).
class Guidance {
public:
    Guidance() = default;
    Guidance(int d, int k_y, int t_max, int width, std::uint64_t init_seed);

    Var predict(Tape& tape, Var x_t, const std::vector<int>& t,
                const std::vector<int>& y);
    Matrix predict_value(const Matrix& x_t, const std::vector<int>& t,
                         const std::vector<int>& y);

    // guidance net plus encoder table; the trainable set for stage 4
    std::vector<Param*> params();
    long param_count() const;
    int width() const { return width_; }

    void save(const std::string& path) const;
    static Guidance load(const std::string& path);

private:
    int d_ = 0;
    int width_ = 0;
    std::optional<TimeEmbedding> emb_;
    LabelEncoder encoder_;
    Mlp net_;
};

// Effective noise estimate used by the sampler: classifier-free
// interpolation between the conditional and unconditional branches, then
// the guidance correction subtracted with weight delta. guidance may be
// null (plain model).
Matrix effective_noise(Denoiser& den, Guidance* guidance, const Matrix& x_t,
                       const std::vector<int>& t, int y, double delta,
                       double w_cfg);

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace invdiff
