#include <doctest.h>

#include <cmath>
#include <set>

#include "gradbench/checkpoint.hpp"
#include "gradbench/errors.hpp"
#include "gradbench/trainer.hpp"
#include "support.hpp"

using namespace gradbench;
using namespace gradbench::train;
using nn::Architecture;
using optim::Kind;

namespace {

data::Dataset small_synth(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed = 1,
                          std::size_t offset = 0) {
    return data::synth_dataset(
        {.classes = classes, .per_class = per_class, .size = size, .noise = 0.05, .seed = seed, .pattern_offset = offset});
}

ExperimentConfig small_config(Architecture arch, Kind kind, std::size_t size, std::size_t classes = 5) {
    ExperimentConfig c;
    c.architecture = arch;
    c.optimizer = kind;
    c.hyper = optim::HyperParams::defaults(kind);
    c.input = {3, size, size};
    c.classes = classes;
    c.epochs = 1;
    return c;
}

// Round trip through the stored precision, as a saved file would give.
Checkpoint stored(const nn::Network& net) { return decode_checkpoint(encode_checkpoint(capture_checkpoint(net))); }

bool same_params(const nn::Network& a, const nn::Network& b) {
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        if (!(a.parameters()[i].value() == b.parameters()[i].value())) return false;
    return true;
}

}  // namespace

TEST_CASE("config validation") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ValueError);
    c = ExperimentConfig{};
    c.transfer = true;
    CHECK_THROWS_AS(c.validate(), ValueError);
    CHECK_NOTHROW(c.validate(false));
    CHECK(parse_freeze_policy("freeze_none") == FreezePolicy::freeze_none);
    CHECK_THROWS_AS(parse_freeze_policy("freeze_some"), ValueError);
}

TEST_CASE("epochs = 0 evaluates the initial network") {
    data::Dataset ds = small_synth(5, 6, 16);
    DataSplits s = make_splits(ds, {}, 1);
    ExperimentConfig c = small_config(Architecture::mini_resnet18, Kind::adam, 16);
    c.epochs = 0;
    TrainOutcome out = train::train(c, s);
    CHECK(out.result.epochs.empty());
    CHECK(out.result.status == RunStatus::ok);
    nn::Network fresh = nn::Network::build(c.architecture, c.input, 5, 1, c.seed);
    Evaluation e = evaluate(fresh, s.test);
    CHECK(out.result.test_accuracy == e.accuracy);
    CHECK(out.result.test_loss == e.loss);
}

TEST_CASE("SGD with lr = 0 leaves mini_vgg bit-identical") {
    data::Dataset ds = small_synth(5, 8, 16);
    DataSplits s = make_splits(ds, {}, 1);
    ExperimentConfig c = small_config(Architecture::mini_vgg, Kind::sgd, 16);
    c.hyper.lr = 0.0;
    c.epochs = 2;
    TrainOutcome out = train::train(c, s);
    CHECK(out.result.epochs.size() == 2);
    CHECK(same_params(out.network, nn::Network::build(c.architecture, c.input, 5, 1, c.seed)));
}

TEST_CASE("8-sample subset is memorized by Adam in 200 epochs") {
    data::Dataset ds = small_synth(4, 2, 16);
    DataSplits s{ds.samples, {}, ds.samples};
    ExperimentConfig c = small_config(Architecture::mini_vgg, Kind::adam, 16, 4);
    c.epochs = 200;
    c.augment = false;
    TrainOutcome out = train::train(c, s);
    REQUIRE(out.result.status == RunStatus::ok);
    CHECK(out.result.epochs.back().train_accuracy == 1.0);
    CHECK(std::isnan(out.result.epochs.back().val_loss));
    CHECK(out.result.test_accuracy == 1.0);
    CHECK(out.result.test_loss < 0.01);
}

TEST_CASE("run records obey their invariants") {
    data::Dataset ds = small_synth(5, 10, 16);
    DataSplits s = make_splits(ds, {}, 1);
    for (Kind k : optim::kAllKinds) {
        ExperimentConfig c = small_config(Architecture::mini_resnet18, k, 16);
        c.epochs = 2;
        RunResult r = train::train(c, s).result;
        INFO(optim::kind_name(k));
        REQUIRE(r.epochs.size() == 2);
        for (const EpochRecord& e : r.epochs) {
            CHECK(std::isfinite(e.train_loss));
            CHECK(e.train_loss >= 0.0);
            CHECK((e.train_accuracy >= 0.0 && e.train_accuracy <= 1.0));
            CHECK((e.val_accuracy >= 0.0 && e.val_accuracy <= 1.0));
            CHECK(e.val_loss >= 0.0);
        }
        CHECK((r.test_accuracy >= 0.0 && r.test_accuracy <= 1.0));
    }
}

TEST_CASE("training is deterministic") {
    data::Dataset ds = small_synth(5, 8, 16);
    DataSplits s = make_splits(ds, {}, 1);
    ExperimentConfig c = small_config(Architecture::mini_resnet18, Kind::nadam, 16);
    c.epochs = 2;
    TrainOutcome a = train::train(c, s), b = train::train(c, s);
    CHECK(same_params(a.network, b.network));
    CHECK(a.result.test_loss == b.result.test_loss);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.result.epochs[i].train_loss == b.result.epochs[i].train_loss);
        CHECK(a.result.epochs[i].val_loss == b.result.epochs[i].val_loss);
    }
}

TEST_CASE("divergence is reported with its position") {
    data::Dataset ds = small_synth(5, 8, 16);
    DataSplits s = make_splits(ds, {}, 1);
    ExperimentConfig c = small_config(Architecture::mini_vgg, Kind::sgd, 16);
    c.hyper.lr = 1e150;
    c.epochs = 3;
    RunResult r = train::train(c, s).result;
    CHECK(r.status == RunStatus::diverged);
    CHECK(r.message.find("epoch") != std::string::npos);
    CHECK(r.diverged_epoch < 3);
}

TEST_CASE("evaluate examples") {
    data::Dataset ds = small_synth(5, 4, 16);
    nn::Network net = nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 1);
    for (const std::string& h : net.head_parameter_names()) net.parameter(h).value().fill(0.0);
    Evaluation e = evaluate(net, ds.samples);
    CHECK(e.loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(e.accuracy == 0.2);

    nn::Network other = nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 2);
    // Give the running stats nonzero values so purity is visible.
    {
        Graph g(false);
        other.forward(g, data::make_batch(ds.samples, std::vector<std::size_t>{0, 5, 10}).images, Mode::train);
    }
    auto stats_before = other.states();
    Evaluation a = evaluate(other, ds.samples, 3), b = evaluate(other, ds.samples, 64);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
    CHECK(evaluate(other, ds.samples).loss == b.loss);
    for (std::size_t i = 0; i < stats_before.size(); ++i) {
        CHECK(other.states()[i].state.running_mean == stats_before[i].state.running_mean);
        CHECK(other.states()[i].state.running_var == stats_before[i].state.running_var);
    }
    CHECK_THROWS_AS(evaluate(other, std::span<const data::Sample>{}), ValueError);
}

TEST_CASE("checkpoint round trip is exact at stored precision") {
    testing::TempDir dir("ckpt");
    for (Architecture a : {Architecture::mini_vgg, Architecture::mini_resnet34}) {
        nn::Network net = nn::Network::build(a, {3, 16, 16}, 4, 1, 3);
        {
            Graph g(false);
            net.forward(g, testing::random_tensor({2, 3, 16, 16}, 1, 0, 1), Mode::train);
        }
        save_checkpoint(net, dir / "net.ckpt");
        Checkpoint back = load_checkpoint(dir / "net.ckpt");
        CHECK(back.architecture == a);
        CHECK(back.input == nn::InputSpec{3, 16, 16});
        CHECK(back.classes == 4);
        CHECK(back.version == kCheckpointVersion);
        Checkpoint direct = capture_checkpoint(net);
        REQUIRE(back.tensors.size() == direct.tensors.size());
        for (std::size_t i = 0; i < back.tensors.size(); ++i) {
            CHECK(back.tensors[i].first == direct.tensors[i].first);
            const Tensor& x = direct.tensors[i].second;
            const Tensor& y = back.tensors[i].second;
            REQUIRE(x.shape() == y.shape());
            for (std::size_t k = 0; k < x.size(); ++k) CHECK(y[k] == static_cast<double>(static_cast<float>(x[k])));
        }
        // A second trip through the file format changes nothing.
        CHECK(encode_checkpoint(back) == encode_checkpoint(decode_checkpoint(encode_checkpoint(back))));
        if (a == Architecture::mini_resnet34) {
            CHECK(back.find("stem.bn.running_mean") != nullptr);
            CHECK(back.find("stem.bn.running_var") != nullptr);
        }
    }
}

TEST_CASE("corrupt checkpoints are rejected") {
    nn::Network net = nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 1);
    std::vector<std::uint8_t> bytes = encode_checkpoint(capture_checkpoint(net));
    for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + cut);
        try {
            decode_checkpoint(part);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        }
    }
    std::vector<std::uint8_t> bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    std::vector<std::uint8_t> extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(extra), FormatError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/gradbench.ckpt"), IoError);
}

TEST_CASE("checkpoint application checks compatibility") {
    Checkpoint vgg = stored(nn::Network::build(Architecture::mini_vgg, {3, 16, 16}, 5, 1, 1));
    nn::Network r18 = nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 1);
    nn::Network untouched = r18.clone();
    try {
        apply_checkpoint(r18, vgg);
        FAIL("expected ValueError");
    } catch (const ValueError& e) {
        CHECK(std::string(e.what()).find("architecture mismatch") != std::string::npos);
    }
    CHECK(same_params(r18, untouched));

    Checkpoint other_input = stored(nn::Network::build(Architecture::mini_resnet18, {3, 32, 32}, 5, 1, 1));
    CHECK_THROWS_AS(apply_checkpoint(r18, other_input), ValueError);

    Checkpoint missing = stored(nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 2));
    missing.tensors.erase(missing.tensors.begin() + 1);
    CHECK_THROWS_AS(apply_checkpoint(r18, missing), ValueError);
    CHECK(same_params(r18, untouched));
}

TEST_CASE("freeze_features keeps every non-head parameter bit-identical for all optimizers") {
    data::Dataset ds = small_synth(5, 40, 16);
    DataSplits s = make_splits(ds, {}, 1);
    REQUIRE(s.train.size() == 160);
    nn::Network source = nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 77);
    {
        Graph g(false);
        source.forward(g, data::make_batch(ds.samples, std::vector<std::size_t>{0, 50, 100, 150}).images, Mode::train);
    }
    Checkpoint ckpt = stored(source);
    for (Kind k : optim::kAllKinds) {
        ExperimentConfig c = small_config(Architecture::mini_resnet18, k, 16);
        c.transfer = true;
        c.freeze = FreezePolicy::freeze_features;
        TrainOutcome out = train::train(c, s, &ckpt);  // 160 / 16 = 10 steps
        INFO(optim::kind_name(k));
        bool head_moved = false;
        for (const Variable& p : out.network.parameters()) {
            if (out.network.is_head_parameter(p.name())) {
                head_moved = head_moved || !(p.value() == Tensor::like(p.value(), 0.0));
                continue;
            }
            CHECK(p.value() == *ckpt.find(p.name()));
            CHECK_FALSE(p.trainable());
        }
        CHECK(head_moved);
        for (const nn::NamedState& st : out.network.states()) {
            CHECK(st.state.running_mean == *ckpt.find(st.name + ".running_mean"));
            CHECK(st.state.running_var == *ckpt.find(st.name + ".running_var"));
        }
    }
}

TEST_CASE("freeze_none lets feature parameters move") {
    data::Dataset ds = small_synth(5, 4, 16);
    DataSplits s{ds.samples, {}, ds.samples};
    Checkpoint ckpt = stored(nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 77));
    ExperimentConfig c = small_config(Architecture::mini_resnet18, Kind::adam, 16);
    c.transfer = true;
    c.freeze = FreezePolicy::freeze_none;
    c.batch_size = 20;
    TrainOutcome out = train::train(c, s, &ckpt);
    CHECK(out.network.parameter("head.weight").value() != *ckpt.find("head.weight"));
    CHECK_FALSE(out.network.parameter("stem.conv.weight").value() == *ckpt.find("stem.conv.weight"));
}

TEST_CASE("checkpoint with 3 classes transfers features into a 5-class network") {
    nn::Network src3 = nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 3, 1, 11);
    Checkpoint ckpt = stored(src3);
    for (FreezePolicy policy : {FreezePolicy::freeze_features, FreezePolicy::freeze_none}) {
        nn::Network net = nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 1);
        ApplyResult r = apply_transfer(net, ckpt, policy);
        CHECK(r.skipped_head == std::vector<std::string>{"head.weight", "head.bias"});
        CHECK(net.parameter("head.weight").shape() == Shape{64, 5});
        CHECK(net.parameter("head.weight").value() == Tensor({64, 5}, 0.0));
        CHECK(net.parameter("stage2.block1.conv1.weight").value() == *ckpt.find("stage2.block1.conv1.weight"));
    }
}

TEST_CASE("sweep cells follow the report order") {
    std::vector<Architecture> archs{Architecture::mini_resnet18};
    std::vector<Kind> kinds{Kind::nadam, Kind::sgd, Kind::rmsprop, Kind::adam, Kind::adadelta, Kind::adagrad, Kind::adamax};
    auto cells = sweep_cells(archs, kinds, {true, false});
    REQUIRE(cells.size() == 14);
    for (std::size_t i = 0; i < 14; ++i) {
        CHECK(cells[i].optimizer == optim::kAllKinds[i / 2]);
        CHECK(cells[i].transfer == (i % 2 == 1));
    }
}

TEST_CASE("sweep runs every cell deterministically and shares splits") {
    data::Dataset ds = small_synth(5, 6, 16);
    DataSplits s = make_splits(ds, {}, 1);
    SweepOptions o;
    o.base = small_config(Architecture::mini_resnet18, Kind::adam, 16);
    o.architectures = {Architecture::mini_resnet18};
    o.optimizers.assign(optim::kAllKinds.begin(), optim::kAllKinds.end());
    o.transfer_modes = {false, true};
    std::map<Architecture, Checkpoint> sources{
        {Architecture::mini_resnet18, stored(nn::Network::build(Architecture::mini_resnet18, {3, 16, 16}, 5, 1, 5))}};

    auto a = sweep(o, s, sources);
    o.jobs = 3;
    auto b = sweep(o, s, sources);
    REQUIRE(a.size() == 14);
    REQUIRE(b.size() == 14);
    for (std::size_t i = 0; i < 14; ++i) {
        CHECK(a[i].status == RunStatus::ok);
        CHECK(a[i].config.optimizer == b[i].config.optimizer);
        CHECK(a[i].config.transfer == b[i].config.transfer);
        CHECK(a[i].test_accuracy == b[i].test_accuracy);
        CHECK(a[i].test_loss == b[i].test_loss);
        CHECK(a[i].epochs[0].train_loss == b[i].epochs[0].train_loss);
    }

    auto missing = sweep(o, s, {});
    for (std::size_t i = 0; i < 14; ++i) CHECK(missing[i].status == (i % 2 ? RunStatus::error : RunStatus::ok));
}
