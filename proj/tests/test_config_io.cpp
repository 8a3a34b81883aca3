#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dpnas/common.hpp"
#include "dpnas/config.hpp"
#include "dpnas/dataset.hpp"
#include "dpnas/manifest.hpp"
#include "dpnas/report.hpp"

using namespace dpnas;
namespace fs = std::filesystem;

TEST_CASE("config defaults carry the documented values") {
    const auto cfg = Config::defaults();
    CHECK(cfg.get_int("search.total") == 2500);
    CHECK(cfg.get_int("search.explore") == 1500);
    CHECK(cfg.get_int("search.decay_every") == 100);
    CHECK(cfg.get_int("train.epochs") == 30);
    CHECK(cfg.get_double("train.lr") == doctest::Approx(1e-3));
    CHECK(cfg.get_int("train.batch") == 128);
    CHECK(cfg.get_double("dataset.val_fraction") == doctest::Approx(0.10));
    CHECK(cfg.get_int("search.flat_cap") == 262144);
}

TEST_CASE("config files parse sections and dotted keys") {
    const auto path =
        fs::temp_directory_path() /
        ("dpnas_cfg_" + std::to_string(std::random_device{}()) + ".ini");
    {
        std::ofstream f(path);
        f << "# comment\n"
          << "[dataset]\n"
          << "name = mnist\n"
          << "\n"
          << "[search]\n"
          << "total = 12\n"
          << "train.epochs = 3\n";  // dotted key, overrides section
    }
    const auto cfg = Config::from_file(path.string());
    CHECK(cfg.get_str("dataset.name") == "mnist");
    CHECK(cfg.get_int("search.total") == 12);
    CHECK(cfg.get_int("train.epochs") == 3);
    fs::remove(path);

    CHECK_THROWS_AS(Config::from_file("/nonexistent/nope.ini"), ConfigError);
}

TEST_CASE("config dump round-trips through the parser") {
    auto cfg = Config::defaults();
    cfg.set("search.total", "77");
    const auto text = cfg.dump();

    const auto path =
        fs::temp_directory_path() /
        ("dpnas_cfg_rt_" + std::to_string(std::random_device{}()) + ".ini");
    {
        std::ofstream f(path);
        f << text;
    }
    const auto back = Config::from_file(path.string());
    CHECK(back.raw() == cfg.raw());
    fs::remove(path);
}

TEST_CASE("config errors are typed and descriptive") {
    Config cfg = Config::defaults();
    CHECK_THROWS_AS(cfg.get_str("no.such.key"), ConfigError);
    cfg.set("search.total", "not-a-number");
    CHECK_THROWS_AS(cfg.get_int("search.total"), ConfigError);
    CHECK_THROWS_AS(cfg.parse_line("novalue", "f", 1), ConfigError);
    CHECK_THROWS_AS(cfg.parse_line("[unterminated", "f", 2), ConfigError);
}

TEST_CASE("increments strings parse into class sets") {
    const auto inc = parse_increments("0,1|2,3|4,5|6,7|8,9");
    REQUIRE(inc.size() == 5);
    CHECK(inc[0] == std::vector<int>{0, 1});
    CHECK(inc[4] == std::vector<int>{8, 9});
    CHECK(parse_increments("0,1,2,3,4|5,6,7,8,9").size() == 2);
    CHECK(parse_increments("").empty());
}

TEST_CASE("manifests round-trip") {
    RunManifest m;
    m.command = "search";
    m.argv = {"dpnas", "search", "--dataset", "mnist"};
    m.config = {{"dataset.name", "mnist"}, {"run.seed", "0"}};
    m.seed = 0;
    m.started_at = now_iso8601();
    m.out_dir = "/tmp/x";

    const auto path =
        fs::temp_directory_path() /
        ("dpnas_manifest_" + std::to_string(std::random_device{}()) + ".json");
    m.save(path.string());
    const auto back = RunManifest::load(path.string());
    CHECK(back.command == m.command);
    CHECK(back.argv == m.argv);
    CHECK(back.config == m.config);
    CHECK(back.seed == m.seed);
    CHECK(back.version == std::string(kVersion));
    fs::remove(path);

    CHECK_THROWS_AS(RunManifest::load("/nonexistent/manifest.json"),
                    DataError);
}

TEST_CASE("report consolidates runs and flags deviations") {
    const auto base =
        fs::temp_directory_path() /
        ("dpnas_report_" + std::to_string(std::random_device{}()));
    const auto run = base / "baseline-lc-mnist";
    fs::create_directories(run);

    RunManifest m;
    m.command = "baseline-lc";
    m.out_dir = run.string();
    m.save((run / "manifest.json").string());
    {
        std::ofstream f(run / "results.json");
        f << R"({"results":[
            {"label":"baseline-lc mnist","anchor":"baseline-lc/mnist","accuracy_pct":91.2},
            {"label":"off the rails","anchor":"baseline-lc/mnist","accuracy_pct":50.0},
            {"label":"unanchored","accuracy_pct":12.0}]})";
    }

    const auto out = (base / "report").string();
    const int flagged = write_report({run.string()}, out);
    CHECK(flagged == 1);  // 91.2 within 1.5 of 91.48; 50.0 is not
    CHECK(fs::exists(out + "/report.md"));
    CHECK(fs::exists(out + "/continual_curves.csv"));

    std::ifstream md(out + "/report.md");
    std::string text((std::istreambuf_iterator<char>(md)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("DEVIATES") != std::string::npos);
    CHECK(text.find("EWC") != std::string::npos);

    CHECK_THROWS_AS(write_report({"/nonexistent/run"}, out), DataError);
    fs::remove_all(base);
}

TEST_CASE("named reference architectures parse and validate") {
    for (const char* name : {"cnn2l-ref", "lenet-ref"}) {
        const auto text = named_reference_arch(name);
        REQUIRE(text.has_value());
        const auto spec = parse_arch(*text, Shape3{1, 28, 28});
        CHECK(infer_shapes(spec).valid());
        const auto cifar = parse_arch(*text, Shape3{3, 32, 32});
        CHECK(infer_shapes(cifar).valid());
    }
    CHECK(!named_reference_arch("resnet-50").has_value());

    // documented flattened dims on 28x28 inputs
    const auto cnn2l =
        parse_arch(*named_reference_arch("cnn2l-ref"), Shape3{1, 28, 28});
    CHECK(infer_shapes(cnn2l).trace->flat_dim == 6272);
    const auto lenet =
        parse_arch(*named_reference_arch("lenet-ref"), Shape3{1, 28, 28});
    CHECK(infer_shapes(lenet).trace->flat_dim == 120 * 7 * 7);
}
