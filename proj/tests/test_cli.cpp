#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "gradbench/commands.hpp"
#include "gradbench/config.hpp"
#include "gradbench/errors.hpp"
#include "gradbench/report.hpp"
#include "support.hpp"

using namespace gradbench;
using namespace gradbench::cli;
using testing::read_file;
using testing::TempDir;
using testing::write_file;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::size_t count_char(const std::string& s, char c) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), c)); }

std::string train_config(const std::filesystem::path& out) {
    return "# small run\n"
           "architecture = mini_resnet18\n"
           "optimizer = adam\n"
           "epochs = 3\n"
           "input_size = 16\n"
           "synth_per_class = 8\n"
           "out_dir = " + out.string() + "\n";
}

std::string sweep_config(const std::filesystem::path& out) {
    return "architectures = mini_resnet18\n"
           "optimizers = rmsprop,adam,sgd,adadelta,adagrad,adamax,nadam\n"
           "transfer_modes = off,on\n"
           "epochs = 1\n"
           "pretrain_epochs = 1\n"
           "input_size = 16\n"
           "synth_per_class = 6\n"
           "out_dir = " + out.string() + "\n";
}

train::RunResult fake(nn::Architecture a, optim::Kind k, bool tl, train::RunStatus st, double acc, double loss) {
    train::RunResult r;
    r.config.architecture = a;
    r.config.optimizer = k;
    r.config.transfer = tl;
    r.status = st;
    r.test_accuracy = acc;
    r.test_loss = loss;
    r.epochs.resize(2);
    return r;
}

int run_cli(const std::string& args) {
    int rc = std::system((std::string(GRADBENCH_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config parsing and error locations") {
    auto f = config::ConfigFile::parse("# comment\n  epochs = 4 \n\nlr=0.01\nflag = maybe\n", "run.cfg");
    CHECK(f.get_size("epochs", 0) == 4);
    CHECK(f.get_double("lr", 0) == 0.01);
    CHECK(f.get_size("missing", 7) == 7);
    CHECK(f.where("lr") == "run.cfg line 4, key 'lr'");
    try {
        f.get_bool("flag", false);
        FAIL("expected ValueError");
    } catch (const ValueError& e) {
        CHECK(std::string(e.what()).find("line 5, key 'flag'") != std::string::npos);
    }
    f.set_override("epochs=9");
    CHECK(f.get_size("epochs", 0) == 9);
    CHECK(f.where("epochs") == "override, key 'epochs'");

    CHECK_THROWS_WITH_AS(config::ConfigFile::parse("a=1\nnonsense\n", "x.cfg"), doctest::Contains("x.cfg line 2"),
                         ValueError);
    CHECK_THROWS_WITH_AS(config::ConfigFile::parse("a=1\na=2\n", "x.cfg"), doctest::Contains("key 'a'"), ValueError);

    auto g = config::ConfigFile::parse("epochs = many\n", "y.cfg");
    CHECK_THROWS_WITH_AS(config::settings_from(g), doctest::Contains("y.cfg line 1, key 'epochs'"), ValueError);
    auto h = config::ConfigFile::parse("seed = 1\nepoch = 3\n", "z.cfg");
    CHECK_THROWS_WITH_AS(config::settings_from(h), doctest::Contains("line 2, key 'epoch'"), ValueError);
    CHECK(config::ConfigFile::parse("l = a, b ,c\n").get_list("l") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("settings defaults and hyperparameter overrides") {
    config::Settings s = config::settings_from(config::ConfigFile::parse(""));
    CHECK(s.experiment.epochs == 30);
    CHECK(s.experiment.batch_size == 16);
    CHECK(s.experiment.seed == 1);
    CHECK(s.experiment.hyper.lr == 1e-3);
    CHECK(s.optimizers.size() == 7);
    CHECK(s.transfer_modes == std::vector<bool>{false, true});

    config::Settings d = config::settings_from(config::ConfigFile::parse("optimizer = adadelta\n"));
    CHECK(d.experiment.hyper.lr == 1.0);
    CHECK(d.experiment.hyper.eps == 1e-6);
    config::Settings o = config::settings_from(config::ConfigFile::parse("optimizer = adadelta\nlr = 0.5\n"));
    CHECK(o.experiment.hyper.lr == 0.5);
}

TEST_CASE("train writes metrics, summary and checkpoint") {
    TempDir dir("train");
    write_file(dir / "run.cfg", train_config(dir / "out"));
    std::ostringstream out, err;
    REQUIRE(cmd_train(dir / "run.cfg", {}, out, err) == kExitOk);
    std::string csv = read_file(dir / "out/metrics.csv");
    auto rows = lines_of(csv);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "epoch,train_loss,train_accuracy,val_loss,val_accuracy");
    CHECK(rows[3].rfind("2,", 0) == 0);
    std::string summary = read_file(dir / "out/summary.txt");
    CHECK(summary.find("status=ok") != std::string::npos);
    CHECK(summary.find("epochs=3") != std::string::npos);
    Checkpoint ck = load_checkpoint(dir / "out/model.ckpt");
    CHECK(ck.architecture == nn::Architecture::mini_resnet18);
    CHECK(std::filesystem::exists(dir / "out/train.log"));

    std::ostringstream out2, err2;
    REQUIRE(cmd_train(dir / "run.cfg", {}, out2, err2) == kExitOk);
    CHECK(read_file(dir / "out/metrics.csv") == csv);

    std::ostringstream out3, err3;
    REQUIRE(cmd_train(dir / "run.cfg", {"epochs=1", "out_dir=" + (dir / "one").string()}, out3, err3) == kExitOk);
    CHECK(lines_of(read_file(dir / "one/metrics.csv")).size() == 2);
}

TEST_CASE("train rejects bad configs with usage exit code") {
    TempDir dir("trainbad");
    write_file(dir / "bad.cfg", train_config(dir / "out") + "optimizer = adamw\n");
    std::ostringstream out, err;
    CHECK(cmd_train(dir / "bad.cfg", {}, out, err) == kExitUsage);

    write_file(dir / "bad2.cfg", "architecture = mini_resnet18\noptimizer = adamw\n");
    std::ostringstream o2, e2;
    CHECK(cmd_train(dir / "bad2.cfg", {}, o2, e2) == kExitUsage);
    for (optim::Kind k : optim::kAllKinds) CHECK(e2.str().find(std::string(optim::kind_name(k))) != std::string::npos);
    CHECK(e2.str().find("line 2") != std::string::npos);

    std::ostringstream o3, e3;
    CHECK(cmd_train(dir / "absent.cfg", {}, o3, e3) != kExitOk);

    write_file(dir / "div.cfg", train_config(dir / "div"));
    std::ostringstream o4, e4;
    CHECK(cmd_train(dir / "div.cfg", {"optimizer=sgd", "lr=1e150"}, o4, e4) == kExitRuntime);
    CHECK(e4.str().find("diverged") != std::string::npos);
}

TEST_CASE("report tables have the fixed layout") {
    std::vector<train::RunResult> rs;
    for (optim::Kind k : optim::kAllKinds) {
        rs.push_back(fake(nn::Architecture::mini_resnet18, k, false, train::RunStatus::ok, 0.5, 1.25));
        rs.push_back(fake(nn::Architecture::mini_resnet18, k, true,
                          k == optim::Kind::sgd ? train::RunStatus::diverged : train::RunStatus::ok, 0.8766, 0.1));
    }
    auto tables = report::build_tables(rs);
    REQUIRE(tables.size() == 1);
    std::string csv = report::render_csv(tables[0]);
    auto rows = lines_of(csv);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == "metric,RMSProp,Adam,SGD,Adadelta,Adagrad,Adamax,Nadam");
    CHECK(rows[1] == "accuracy,0.500,0.500,0.500,0.500,0.500,0.500,0.500");
    CHECK(rows[3] == "accuracy_tl,0.877,0.877,diverged,0.877,0.877,0.877,0.877");
    CHECK(rows[4].rfind("loss_tl,0.100,0.100,diverged,", 0) == 0);

    std::string md = report::render_markdown(tables[0]);
    CHECK(md.find("| metric | RMSProp | Adam | SGD | Adadelta | Adagrad | Adamax | Nadam |") != std::string::npos);
    CHECK(md.find("| accuracy_tl | 0.877 | 0.877 | diverged |") != std::string::npos);
    CHECK(md.find(report::kReferenceLabel) != std::string::npos);
    CHECK(md.find("| accuracy_tl | 0.676 | 0.879 | 0.871 | 0.708 | 0.879 | 0.884 | 0.748 |") != std::string::npos);

    auto long_rows = lines_of(report::render_long_csv(rs));
    REQUIRE(long_rows.size() == 15);
    CHECK(long_rows[0] == report::kLongCsvHeader);
    CHECK(long_rows[1].rfind("mini_resnet18,rmsprop,off,0.500000,1.250000,2,", 0) == 0);
    CHECK(long_rows[6].rfind("mini_resnet18,sgd,on,,,2,", 0) == 0);
    CHECK(long_rows[6].find(",diverged") != std::string::npos);

    report::Cell missing;
    CHECK(report::format_cell(missing) == "n/a");
}

TEST_CASE("reference footers quote every table") {
    auto vgg = report::reference_for(nn::Architecture::mini_vgg);
    REQUIRE(vgg);
    CHECK(vgg->rows[0][5] == "0.668");
    CHECK(vgg->rows[0][6] == "0.661");
    CHECK(report::reference_for(nn::Architecture::mini_resnet18)->rows[2][5] == "0.884");
    CHECK(report::reference_for(nn::Architecture::mini_resnet34)->rows[3][6] == "0.160");
    CHECK_FALSE(report::reference_for(nn::Architecture::custom));
}

TEST_CASE("sweep writes tables and long CSV, identical across job counts") {
    TempDir dir("sweep");
    write_file(dir / "sweep.cfg", sweep_config(dir / "a"));
    std::ostringstream out, err;
    REQUIRE(cmd_sweep(dir / "sweep.cfg", 1, {}, out, err) == kExitOk);
    std::ostringstream out2, err2;
    REQUIRE(cmd_sweep(dir / "sweep.cfg", 2, {"out_dir=" + (dir / "b").string()}, out2, err2) == kExitOk);

    for (const char* name : {"table_mini_resnet18.csv", "table_mini_resnet18.md"}) {
        std::string a = read_file(dir / "a" / name);
        CHECK_FALSE(a.empty());
        CHECK(a == read_file(dir / "b" / name));
    }
    auto csv = lines_of(read_file(dir / "a/table_mini_resnet18.csv"));
    REQUIRE(csv.size() == 5);
    for (const std::string& row : csv) CHECK(count_char(row, ',') == 7);
    auto results = lines_of(read_file(dir / "a/results.csv"));
    CHECK(results.size() == 15);
    CHECK(results[0] == report::kLongCsvHeader);
    CHECK(std::filesystem::exists(dir / "a/source_mini_resnet18.ckpt"));
}

TEST_CASE("sweep with every cell failing exits 3") {
    TempDir dir("sweepfail");
    write_file(dir / "sweep.cfg", sweep_config(dir / "out") + "checkpoint_mini_resnet18 = " + (dir / "none.ckpt").string() +
                                      "\n");
    std::ostringstream out, err;
    CHECK(cmd_sweep(dir / "sweep.cfg", 1, {"transfer_modes=on"}, out, err) != kExitOk);
    std::ostringstream o2, e2;
    CHECK(cmd_sweep(dir / "sweep.cfg", 1, {"optimizers=sgd", "transfer_modes=off", "lr=1e150"}, o2, e2) ==
          kExitAllFailed);
}

TEST_CASE("gradcheck exit codes") {
    std::ostringstream out, err;
    CHECK(cmd_gradcheck(GradCheckScope::ops, 1, false, out, err) == kExitOk);
    CHECK(out.str().find("PASS") != std::string::npos);
    CHECK(out.str().find("max_rel_error") != std::string::npos);
    std::ostringstream o2, e2;
    CHECK(cmd_gradcheck(GradCheckScope::ops, 1, true, o2, e2) != kExitOk);
    CHECK(o2.str().find("FAIL") != std::string::npos);
}

TEST_CASE("synth writes images and a loadable manifest") {
    TempDir dir("synthcli");
    SynthArgs a;
    a.out = dir / "one";
    a.classes = 5;
    a.per_class = 100;
    a.size = 8;
    std::ostringstream out, err;
    REQUIRE(cmd_synth(a, out, err) == kExitOk);
    std::size_t images = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(a.out))
        if (e.path().extension() == ".ppm") ++images;
    CHECK(images == 500);
    CHECK(lines_of(read_file(a.out / "manifest.tsv")).size() == 500);

    SynthArgs b = a;
    b.out = dir / "two";
    REQUIRE(cmd_synth(b, out, err) == kExitOk);
    for (const auto& e : std::filesystem::recursive_directory_iterator(a.out)) {
        if (!e.is_regular_file()) continue;
        auto rel = std::filesystem::relative(e.path(), a.out);
        CHECK(read_file(e.path()) == read_file(b.out / rel));
    }

    data::Dataset ds = data::load_dataset(a.out / "manifest.tsv");
    data::Dataset direct = data::synth_dataset({.classes = 5, .per_class = 100, .size = 8, .noise = 0.05, .seed = 1});
    REQUIRE(ds.size() == direct.size());
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds.samples[i].image == direct.samples[i].image);

    SynthArgs bad = a;
    bad.classes = 1;
    CHECK(cmd_synth(bad, out, err) == kExitUsage);
}

TEST_CASE("command-line binary exit codes") {
    TempDir dir("bin");
    CHECK(run_cli("") == 1);
    CHECK(run_cli("train") == 1);
    CHECK(run_cli("gradcheck --scope bogus") == 1);
    CHECK(run_cli("synth --out " + (dir / "s").string() + " --classes 2 --per-class 2 --size 8") == 0);
    CHECK(lines_of(read_file(dir / "s/manifest.tsv")).size() == 4);
    CHECK(run_cli("gradcheck --scope ops --corrupt-gradient") == 2);
}

TEST_CASE("worker count resolution") {
    CHECK(resolve_jobs(3) == 3);
    ::setenv("GRADBENCH_THREADS", "1", 1);
    CHECK(resolve_jobs(std::nullopt) == 1);
    CHECK(resolve_jobs(4) == 4);
    ::unsetenv("GRADBENCH_THREADS");
    CHECK(resolve_jobs(std::nullopt) >= 1);
}
