#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "illiquid/cli.hpp"
#include "illiquid/power_closed_form.hpp"

using namespace illiquid;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args, const std::string& stdin_text = "") {
    args.insert(args.begin(), "illiquid");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    std::istringstream in(stdin_text);
    auto* old = std::cin.rdbuf(in.rdbuf());
    int code = run_cli(int(argv.size()), argv.data(), out, err);
    std::cin.rdbuf(old);
    return {code, out.str(), err.str()};
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("illiquid_cli_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string write_config(const std::filesystem::path& dir, const json& j) {
    auto p = dir / "config.json";
    std::ofstream(p) << j.dump();
    return p.string();
}

const std::vector<std::string> small{"--nx", "96", "--nz", "96", "--decades", "2", "--x-res", "0.01"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("solve: nonpositive gamma converges at once without benefit") {
    auto dir = scratch("neg");
    auto r = run(with({"solve", "--gamma", "-0.5", "--p", "2", "--out", dir.string()}, small));
    CHECK(r.code == EXIT_OK);
    auto j = json::parse(r.out);
    CHECK(j["status"] == "Converged");
    CHECK(j["n_final"] == 0);
    CHECK(j["benefit_nodes"] == 0);
    CHECK(std::filesystem::exists(dir / "summary.json"));
    std::ifstream f(dir / "grid.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "x,z,u0,m,uinf,benefit");
    std::size_t rows = 0;
    while (std::getline(f, line)) {
        ++rows;
        CHECK(line.substr(line.rfind(',') + 1) == "0");
    }
    CHECK(rows > 0);
}

TEST_CASE("solve: infinite value exits with divergence") {
    auto dir = scratch("inf");
    auto r = run(with({"solve", "--gamma", "0.6", "--p", "0.5", "--out", dir.string()}, small));
    CHECK(r.code == EXIT_DIVERGENCE);
    auto j = json::parse(r.out);
    CHECK(j["status"] == "Diverging");
    CHECK(j["explanation"].get<std::string>().find("+inf") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "grid.csv"));
    auto c = run({"solve", "--gamma", "1.2", "--p", "1", "--out", dir.string()});
    CHECK(c.code == EXIT_DIVERGENCE);
}

TEST_CASE("solve: malformed window is a usage error") {
    auto dir = scratch("bad");
    json cfg = {{"market", {{"type", "gbm"}, {"mu", 0.25}, {"sigma", 1.0}}},
                {"utility", {{"type", "power"}, {"p", 2.0}}},
                {"window",
                 {{"type", "uniform"}, {"x_min", -1.0}, {"x_max", 1.0}, {"nx", 32}, {"z_min", 2.0}, {"z_max", 1.0}, {"nz", 32}}}};
    auto r = run({"solve", "--config", write_config(dir, cfg)});
    CHECK(r.code == EXIT_USAGE);
    CHECK(r.err.find("z_min") != std::string::npos);
    cfg["window"]["z_max"] = 3.0;
    cfg["window"]["nx"] = 8;
    CHECK(run({"solve", "--config", write_config(dir, cfg)}).code == EXIT_USAGE);
    CHECK(run({"solve", "--config", (dir / "missing.json").string()}).code == EXIT_USAGE);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(run({"solve", "--config", (dir / "broken.json").string()}).code == EXIT_USAGE);
    CHECK(run({"frobnicate"}).code == EXIT_USAGE);
    CHECK(run({"solve", "--gamma", "0.5"}).code == EXIT_USAGE);
    CHECK(run({"--help"}).code == EXIT_OK);
}

TEST_CASE("solve: uniform window config with widening") {
    auto dir = scratch("uniform");
    json cfg = {{"market", {{"type", "gbm"}, {"gamma", 0.5}}},
                {"utility", {{"type", "power"}, {"p", 2.0}}},
                {"window",
                 {{"type", "uniform"}, {"x_min", -0.5}, {"x_max", 3.0}, {"nx", 64}, {"z_min", 0.0}, {"z_max", 3.0}, {"nz", 64}}},
                {"solver", {{"widening_rounds", 1}}},
                {"output", {{"dir", dir.string()}}}};
    auto r = run({"solve", "--config", write_config(dir, cfg)});
    CHECK(r.code == EXIT_OK);
    auto j = json::parse(r.out);
    CHECK(j["status"] == "Converged");
    CHECK(j["widening_check"]["performed"] == true);
    CHECK(j["widening_check"]["increments"].size() == 1);
}

TEST_CASE("solve: grid csv reproduces the library solve bit for bit") {
    auto dir = scratch("csv");
    auto r = run(with({"solve", "--gamma", "0.8", "--p", "2", "--out", dir.string(), "--widening-rounds", "0"}, small));
    auto status = json::parse(r.out)["status"].get<std::string>();
    CHECK(r.code == (status == "Converged" ? EXIT_OK : EXIT_NOT_MET));

    auto t = scale_closed_form(0.8);
    auto u = UtilitySpec::power(2.0);
    auto w = std::make_shared<const GridWindow>(lattice_window(t, u, power_lattice(2, 96, 96, true, 0.01)));
    auto g0 = build_ubar(u, t, w);
    auto s = iterate_to_fixed_point(g0);
    std::ifstream f(dir / "grid.csv");
    std::string line;
    std::getline(f, line);
    for (std::size_t i = 0; i < w->nx(); ++i)
        for (std::size_t j = 0; j < w->nz(); ++j) {
            if (!w->on_mask(i, j)) continue;
            REQUIRE(std::getline(f, line));
            std::stringstream ls(line);
            std::string tok;
            std::vector<double> v;
            while (std::getline(ls, tok, ',')) v.push_back(std::strtod(tok.c_str(), nullptr));
            REQUIRE(v.size() == 6);
            CHECK(v[0] == w->x_axis[i]);
            CHECK(v[1] == w->z_axis[j]);
            CHECK(v[2] == g0.at(i, j));
            CHECK(v[3] == s.first.at(i, j));
            CHECK(v[4] == s.value.at(i, j));
        }
}

TEST_CASE("solve: numeric transform from a sampled market") {
    auto dir = scratch("numeric");
    json cfg = {{"market", {{"type", "sampled"}, {"ys", {0.1, 10.0}}, {"mu", {0.2, 0.3}}, {"sigma", {1.0, 1.0}}}},
                {"utility", {{"type", "power"}, {"p", 2.0}}},
                {"transform", {{"mode", "numeric"}, {"c", 1.0}}},
                {"window", {{"decades", 1.0}, {"nx", 48}, {"nz", 48}, {"x_res", 0.01}}},
                {"solver", {{"widening_rounds", 1}}},
                {"output", {{"dir", dir.string()}, {"formats", {"json"}}}}};
    auto r = run({"solve", "--config", write_config(dir, cfg)});
    CHECK(r.code != EXIT_USAGE);
    auto j = json::parse(r.out);
    CHECK(j.contains("status"));
    CHECK(std::filesystem::exists(dir / "summary.json"));
    CHECK_FALSE(std::filesystem::exists(dir / "grid.csv"));
}

TEST_CASE("classify") {
    auto r = run({"classify", "--gamma", "0.8", "--p", "2"});
    CHECK(r.code == EXIT_OK);
    auto j = json::parse(r.out);
    CHECK(j["case"] == "StopAndGamble");
    CHECK(j["gamma_hat"].get<double>() == doctest::Approx(2.0 - std::sqrt(2.0)));
    CHECK(j["xi1"].get<double>() == doctest::Approx(6.8558163).epsilon(1e-6));
    CHECK(j["xi2"].get<double>() == doctest::Approx(2.3743919).epsilon(1e-6));
    CHECK(j["expected_fixed_point"] == 2);
    CHECK(j["residuals"].contains("chord"));
    auto k = json::parse(run({"classify", "--gamma", "0.6", "--p", "0.5"}).out);
    CHECK(k["case"] == "InfiniteValue");
    CHECK(k["expected_fixed_point"].is_null());
    CHECK(json::parse(run({"classify", "--gamma", "0.3", "--p", "1"}).out)["low_precision"] == true);
    CHECK(run({"classify", "--gamma", "0.3"}).code == EXIT_USAGE);
}

TEST_CASE("no-trade") {
    auto dir = scratch("nt");
    auto r = run(with({"no-trade", "--gamma", "0.5", "--p", "2", "--out", dir.string()}, small));
    CHECK(r.code == EXIT_OK);
    std::ifstream f(dir / "no_trade.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "x,z,u0,m");
}

TEST_CASE("simulate needs a seed and reports the payoff identity") {
    auto base = with({"simulate", "--gamma", "0.5", "--p", "2", "--x0", "1", "--y0", "0.5", "--n-paths", "20000"}, small);
    auto miss = run(base);
    CHECK(miss.code == EXIT_USAGE);
    CHECK(miss.err.find("seed") != std::string::npos);
    auto a = run(with(base, {"--seed", "42"}));
    REQUIRE(a.code == EXIT_OK);
    auto j = json::parse(a.out);
    for (const char* k : {"mean", "stderr", "n_paths", "target", "z_sigma_level", "martingale_residual"})
        CHECK(j.contains(k));
    CHECK(std::fabs(j["z_sigma_level"].get<double>()) <= 3.0);
    CHECK(j["n_paths"] == 20000);
    CHECK(run(with(base, {"--seed", "42"})).out == a.out);
    CHECK(run(with(base, {"--seed", "42", "--mode", "sideways"})).code == EXIT_USAGE);
}

TEST_CASE("verify: stop-only cases pass") {
    auto r = run({"verify", "--gamma", "0.5", "--p", "2"});
    CHECK(r.code == EXIT_OK);
    auto j = json::parse(r.out);
    CHECK(j["pass"] == true);
    CHECK(j["max_rel_error_u1"].get<double>() <= 1e-2);
    auto h = run({"verify", "--gamma", "3", "--p", "2"});
    CHECK(h.code == EXIT_OK);
    CHECK(run({"verify", "--gamma", "0.6", "--p", "0.5"}).code == EXIT_DIVERGENCE);
}

TEST_CASE("verify: gamble case passes") {
    auto r = run({"verify", "--gamma", "0.8", "--p", "2"});
    INFO(r.out);
    CHECK(r.code == EXIT_OK);
}

TEST_CASE("envelope reads one line") {
    auto r = run({"envelope"}, "0,1,2,0,0,1\n");
    CHECK(r.code == EXIT_OK);
    CHECK(r.out == "0,0.5,1\n");
    auto s = run({"envelope"}, "0,1,2,3,-inf,0,-1,0\n");
    CHECK(s.out == "-inf,0,0,0\n");
    CHECK(run({"envelope"}, "0,1,2\n").code == EXIT_USAGE);
    CHECK(run({"envelope"}, "0,a,2,3\n").code == EXIT_USAGE);
}
