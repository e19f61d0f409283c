#include "invdiff/config.hpp"

#include "invdiff/rng.hpp"

#include <json.hpp>

#include <fstream>
#include <map>
#include <sstream>

namespace invdiff {

namespace {

using nlohmann::json;

json to_json(const RunConfig& c) {
    return json{
        {"dataset",
         {{"n", c.dataset.n},
          {"rho", c.dataset.rho},
          {"sigma", c.dataset.sigma},
          {"seed", c.dataset.seed},
          {"n_test", c.dataset.n_test}}},
        {"schedule",
         {{"T", c.schedule.T},
          {"beta_min", c.schedule.beta_min},
          {"beta_max", c.schedule.beta_max}}},
        {"pretrain",
         {{"steps", c.pretrain.steps},
          {"lr", c.pretrain.lr},
          {"batch", c.pretrain.batch},
          {"p_drop", c.pretrain.p_drop}}},
        {"grouper",
         {{"E", c.grouper.E},
          {"omega", c.grouper.omega},
          {"steps", c.grouper.steps},
          {"lr", c.grouper.lr},
          {"M", c.grouper.M}}},
        {"invtrain",
         {{"delta", c.invtrain.delta},
          {"lambda", c.invtrain.lambda},
          {"steps", c.invtrain.steps},
          {"lr", c.invtrain.lr},
          {"batch", c.invtrain.batch},
          {"width", c.invtrain.width}}},
        {"eval",
         {{"samples_per_prompt", c.eval.samples_per_prompt},
          {"seeds", c.eval.seeds},
          {"k", c.eval.k}}},
        {"seed", c.seed}};
}

template <typename T>
void pull(const json& j, const char* key, T& slot) {
    if (j.contains(key))
        slot = j.at(key).get<T>();
}

} // namespace

std::string RunConfig::canonical() const { return to_json(*this).dump(); }

std::uint64_t RunConfig::hash() const { return fnv1a(canonical()); }

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    RunConfig c;
    try {
        if (j.contains("dataset")) {
            const auto& d = j["dataset"];
            pull(d, "n", c.dataset.n);
            pull(d, "rho", c.dataset.rho);
            pull(d, "sigma", c.dataset.sigma);
            pull(d, "seed", c.dataset.seed);
            pull(d, "n_test", c.dataset.n_test);
        }
        if (j.contains("schedule")) {
            const auto& s = j["schedule"];
            pull(s, "T", c.schedule.T);
            pull(s, "beta_min", c.schedule.beta_min);
            pull(s, "beta_max", c.schedule.beta_max);
        }
        if (j.contains("pretrain")) {
            const auto& p = j["pretrain"];
            pull(p, "steps", c.pretrain.steps);
            pull(p, "lr", c.pretrain.lr);
            pull(p, "batch", c.pretrain.batch);
            pull(p, "p_drop", c.pretrain.p_drop);
        }
        if (j.contains("grouper")) {
            const auto& g = j["grouper"];
            pull(g, "E", c.grouper.E);
            pull(g, "omega", c.grouper.omega);
            pull(g, "steps", c.grouper.steps);
            pull(g, "lr", c.grouper.lr);
            pull(g, "M", c.grouper.M);
        }
        if (j.contains("invtrain")) {
            const auto& t = j["invtrain"];
            pull(t, "delta", c.invtrain.delta);
            pull(t, "lambda", c.invtrain.lambda);
            pull(t, "steps", c.invtrain.steps);
            pull(t, "lr", c.invtrain.lr);
            pull(t, "batch", c.invtrain.batch);
            pull(t, "width", c.invtrain.width);
        }
        if (j.contains("eval")) {
            const auto& e = j["eval"];
            pull(e, "samples_per_prompt", c.eval.samples_per_prompt);
            pull(e, "seeds", c.eval.seeds);
            pull(e, "k", c.eval.k);
        }
        pull(j, "seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::vector<std::string> RunConfig::validate() const {
    std::vector<std::string> v;
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok)
            v.push_back(msg);
    };
    check(dataset.n >= 8, "dataset.n must be >= 8");
    check(dataset.rho >= 0.0 && dataset.rho <= 1.0,
          "dataset.rho must be in [0,1]");
    check(dataset.sigma > 0.0, "dataset.sigma must be > 0");
    check(schedule.T >= 10, "schedule.T must be >= 10");
    check(schedule.beta_min > 0.0 && schedule.beta_min <= schedule.beta_max &&
              schedule.beta_max < 1.0,
          "schedule: need 0 < beta_min <= beta_max < 1");
    check(pretrain.steps >= 1, "pretrain.steps must be >= 1");
    check(pretrain.batch >= 1, "pretrain.batch must be >= 1");
    check(pretrain.p_drop >= 0.0 && pretrain.p_drop < 1.0,
          "pretrain.p_drop must be in [0,1)");
    check(grouper.E >= 2, "grouper.E must be >= 2");
    check(grouper.omega >= 0.0, "grouper.omega must be >= 0");
    check(grouper.steps >= 1, "grouper.steps must be >= 1");
    check(grouper.M >= 1, "grouper.M must be >= 1");
    check(invtrain.delta >= 0.0 && invtrain.delta <= 1.0,
          "invtrain.delta must be in [0,1]");
    check(invtrain.lambda >= 0.0, "invtrain.lambda must be >= 0");
    check(invtrain.steps >= 1, "invtrain.steps must be >= 1");
    check(invtrain.batch >= 1, "invtrain.batch must be >= 1");
    check(invtrain.width >= 1, "invtrain.width must be >= 1");
    check(eval.samples_per_prompt >= 32,
          "eval.samples_per_prompt must be >= 32");
    check(eval.seeds >= 1, "eval.seeds must be >= 1");
    check(eval.k >= 1, "eval.k must be >= 1");
    return v;
}

double RunConfig::get_field(const std::string& path) const {
    json j = to_json(*this);
    auto pos = path.find('.');
    if (pos == std::string::npos) {
        if (!j.contains(path) || !j[path].is_number())
            throw ConfigError("config: no numeric field '" + path + "'");
        return j[path].get<double>();
    }
    std::string head = path.substr(0, pos), tail = path.substr(pos + 1);
    if (!j.contains(head) || !j[head].contains(tail) ||
        !j[head][tail].is_number())
        throw ConfigError("config: no numeric field '" + path + "'");
    return j[head][tail].get<double>();
}

void RunConfig::set_field(const std::string& path, double value) {
    get_field(path); // existence check
    json j = to_json(*this);
    auto pos = path.find('.');
    if (pos == std::string::npos)
        j[path] = value;
    else
        j[path.substr(0, pos)][path.substr(pos + 1)] = value;
    *this = from_json_text(j.dump());
}

} // namespace invdiff
