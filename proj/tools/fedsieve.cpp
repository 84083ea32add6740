#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedsieve/fedsieve.hpp"

namespace {

using nlohmann::json;

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw fedsieve::IoError("cannot open " + path);
    json j;
    in >> j;
    return j;
}

std::vector<std::vector<double>> points_from_json(const json& j) {
    if (!j.contains("points")) throw fedsieve::FormatError("input needs a \"points\" array");
    return j["points"].get<std::vector<std::vector<double>>>();
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            std::optional<std::string> out_dir) {
    auto cf = fedsieve::ConfigFile::parse_file(config_path);
    auto cfg = fedsieve::experiment_from_config(cf);
    if (seed.has_value()) cfg.seed = *seed;
    if (out_dir.has_value()) cfg.out_dir = *out_dir;

    auto records = fedsieve::run_experiment(cfg);
    for (const auto& r : records) {
        std::cout << "round " << r.round << "  MA=" << r.ma << "  BA=" << r.ba
                  << "  benign=" << r.benign_set.size() << "\n";
    }
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        fedsieve::emit(records, cfg.out_dir + "/metrics.csv", fedsieve::EmitFormat::Csv);
        fedsieve::emit(records, cfg.out_dir + "/metrics.jsonl", fedsieve::EmitFormat::JsonLines);
        std::cout << "wrote " << cfg.out_dir << "/metrics.{csv,jsonl}\n";
    }
    return 0;
}

int cmd_probe(const std::string& config_path, std::optional<std::string> out_path) {
    auto cf = fedsieve::ConfigFile::parse_file(config_path);
    auto cfg = fedsieve::probe_from_config(cf);
    auto gaps = fedsieve::convergence_probe(cfg);
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (out_path.has_value()) {
        file.open(*out_path);
        if (!file) throw fedsieve::IoError("cannot open " + *out_path);
        out = &file;
    }
    (*out) << "round,gap\n";
    for (std::size_t t = 0; t < gaps.size(); ++t)
        (*out) << (t + 1) << ',' << json(gaps[t]).dump() << "\n";
    std::cerr << "final gap: " << gaps.back() << "\n";
    return 0;
}

int cmd_oracle(const std::string& which, const std::string& input_path) {
    json in = read_json_file(input_path);
    auto points = points_from_json(in);
    json out;
    if (which == "cof") {
        std::size_t k = in.value("k", points.size() - 1);
        out["scores"] = fedsieve::oracle::cof_bruteforce(points, k);
    } else if (which == "krum") {
        std::size_t f = in.value("f", std::size_t{1});
        auto [scores, winner] = fedsieve::oracle::krum_bruteforce(points, f);
        out["scores"] = scores;
        out["winner"] = winner;
    } else if (which == "gm") {
        auto [point, objective] = fedsieve::oracle::geometric_median_grid(points);
        out["point"] = point;
        out["objective"] = objective;
    } else {
        throw fedsieve::ConfigError("oracle must be one of: cof, krum, gm");
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedsieve: federated backdoor-defense simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    auto* run = app.add_subcommand("run", "run a federated experiment from a config file");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--out", out_dir, "directory for metrics.csv / metrics.jsonl");

    std::string probe_config;
    std::optional<std::string> probe_out;
    auto* probe = app.add_subcommand("probe-convergence",
                                     "run the strongly convex convergence probe");
    probe->add_option("--config", probe_config, "probe config file")->required();
    probe->add_option("--out", probe_out, "write the gap series CSV here instead of stdout");

    std::string oracle_kind;
    std::string oracle_input;
    auto* oracle = app.add_subcommand("oracle", "run a brute-force oracle on a JSON instance");
    oracle->add_option("kind", oracle_kind, "cof | krum | gm")->required();
    oracle->add_option("--input", oracle_input, "JSON file with points and parameters")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (run->parsed()) return cmd_run(config_path, seed, out_dir);
        if (probe->parsed()) return cmd_probe(probe_config, probe_out);
        if (oracle->parsed()) return cmd_oracle(oracle_kind, oracle_input);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
