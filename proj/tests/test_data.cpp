#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "centroid_oracle.hpp"
#include "gradbench/dataset.hpp"
#include "gradbench/errors.hpp"
#include "gradbench/image.hpp"
#include "support.hpp"

using namespace gradbench;
using namespace gradbench::data;
using testing::random_tensor;
using testing::TempDir;

namespace {

std::vector<std::uint8_t> p6_bytes(std::size_t w, std::size_t h, const std::vector<std::uint8_t>& raster,
                                   const std::string& magic = "P6") {
    std::string header = magic + "\n# test image\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), raster.begin(), raster.end());
    return out;
}

std::vector<double> channel_sums(const Tensor& img) {
    std::vector<double> s(img.dim(0), 0.0);
    const std::size_t hw = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < img.dim(0); ++c)
        for (std::size_t i = 0; i < hw; ++i) s[c] += img[c * hw + i];
    return s;
}

std::multiset<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("P6 decode scales bytes by 1/255") {
    Tensor white = decode_pnm(p6_bytes(3, 2, std::vector<std::uint8_t>(18, 255)));
    CHECK(white.shape() == Shape{3, 2, 3});
    for (double v : white.data()) CHECK(v == 1.0);

    std::vector<std::uint8_t> raster{10, 20, 30, 40, 50, 60};
    Tensor px = decode_pnm(p6_bytes(2, 1, raster));
    CHECK(px.at({0, 0, 0}) == 10 / 255.0);
    CHECK(px.at({1, 0, 0}) == 20 / 255.0);
    CHECK(px.at({2, 0, 1}) == 60 / 255.0);
}

TEST_CASE("P5 decode replicates to three channels") {
    Tensor g = decode_pnm(p6_bytes(2, 2, {0, 51, 102, 255}, "P5"));
    CHECK(g.shape() == Shape{3, 2, 2});
    for (std::size_t c = 0; c < 3; ++c) CHECK(g.at({c, 1, 1}) == 1.0);
    CHECK(g.at({2, 0, 1}) == 0.2);
}

TEST_CASE("malformed images are rejected") {
    auto bytes = p6_bytes(2, 2, std::vector<std::uint8_t>(11, 0));
    CHECK_THROWS_AS(decode_pnm(bytes), FormatError);
    std::string p3 = "P3\n1 1\n255\n0 0 0\n";
    CHECK_THROWS_AS(decode_pnm(std::vector<std::uint8_t>(p3.begin(), p3.end())), FormatError);
    std::string deep = "P6\n1 1\n65535\n";
    CHECK_THROWS_AS(decode_pnm(std::vector<std::uint8_t>(deep.begin(), deep.end())), FormatError);
    CHECK_THROWS_AS(read_image("/nonexistent/gradbench.ppm"), IoError);
}

TEST_CASE("P6 encode and decode round trip") {
    Rng rng(5);
    Tensor img({3, 7, 5});
    for (double& v : img.data()) v = static_cast<double>(rng.below(256)) / 255.0;
    auto bytes = encode_p6(img);
    CHECK(decode_pnm(bytes) == img);

    TempDir dir("p6");
    write_p6(dir / "x.ppm", img);
    CHECK(read_image(dir / "x.ppm") == img);
}

TEST_CASE("manifest parsing") {
    DatasetManifest m = parse_manifest("# header\nb/1.ppm\tbeta\r\n\na/1.ppm\talpha\na/2.ppm\talpha\n", "/data");
    CHECK(m.records.size() == 3);
    CHECK(m.class_names == std::vector<std::string>{"alpha", "beta"});
    CHECK(m.class_index("beta") == 1);
    CHECK(m.class_index("gamma") == -1);
    CHECK(m.records[0].path == "b/1.ppm");
    CHECK(m.records[0].class_name == "beta");

    CHECK_THROWS_AS(parse_manifest("a.ppm alpha\n", "/"), FormatError);
    CHECK_THROWS_AS(parse_manifest("a.ppm\talpha\na.ppm\tbeta\n", "/"), FormatError);

    std::vector<std::string> fixed{"x", "y"};
    CHECK_THROWS_AS(parse_manifest("a.ppm\tz\n", "/", &fixed), ValueError);
    CHECK(parse_manifest("a.ppm\ty\n", "/", &fixed).class_index("y") == 1);
}

TEST_CASE("load_dataset of 2 classes x 2 images") {
    TempDir dir("load");
    std::filesystem::create_directories(dir / "cats");
    std::filesystem::create_directories(dir / "dogs");
    Tensor white({3, 4, 4}, 1.0), black({3, 4, 4}, 0.0);
    write_p6(dir / "cats/a.ppm", white);
    write_p6(dir / "cats/b.ppm", white);
    write_p6(dir / "dogs/a.ppm", black);
    write_p6(dir / "dogs/b.ppm", black);
    testing::write_file(dir / "manifest.tsv", "dogs/a.ppm\tdogs\ncats/a.ppm\tcats\ndogs/b.ppm\tdogs\ncats/b.ppm\tcats\n");

    Dataset ds = load_dataset(dir / "manifest.tsv");
    CHECK(ds.size() == 4);
    CHECK(ds.class_names == std::vector<std::string>{"cats", "dogs"});
    std::set<int> labels;
    for (const Sample& s : ds.samples) {
        labels.insert(s.label);
        CHECK(s.image == (s.label == 0 ? white : black));
    }
    CHECK(labels == std::set<int>{0, 1});

    Dataset resized = load_dataset(dir / "manifest.tsv", std::pair<std::size_t, std::size_t>{8, 6});
    CHECK(resized.samples[0].image.shape() == Shape{3, 8, 6});

    testing::write_file(dir / "bad.tsv", "cats/a.ppm\tcats\ncats/missing.ppm\tcats\n");
    try {
        load_dataset(dir / "bad.tsv");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("cats/missing.ppm") != std::string::npos);
    }
    CHECK_THROWS_AS(load_dataset(dir / "absent.tsv"), IoError);
}

TEST_CASE("split counts follow the floor rule") {
    SplitCounts c = split_counts(100, {});
    CHECK((c.train == 80 && c.val == 10 && c.test == 10));
    c = split_counts(4049, {});
    CHECK((c.train == 3241 && c.val == 404 && c.test == 404));
    for (std::size_t n = 3; n <= 500; ++n) {
        SplitAssignment a = split_dataset(n, {}, 1);
        CHECK(a.count(SplitTag::val) == n / 10);
        CHECK(a.count(SplitTag::test) == n / 10);
        CHECK(a.count(SplitTag::train) == n - 2 * (n / 10));
    }
}

TEST_CASE("split blocks partition the records") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SplitAssignment a = split_dataset(97, {0.6, 0.2, 0.2}, seed);
        std::vector<std::size_t> all;
        for (SplitTag t : {SplitTag::train, SplitTag::val, SplitTag::test}) {
            auto idx = a.indices(t);
            for (std::size_t i : idx) CHECK(a.tags[i] == t);
            all.insert(all.end(), idx.begin(), idx.end());
        }
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < 97; ++i) CHECK(all[i] == i);
        CHECK(a.order.size() == 97);
    }
}

TEST_CASE("split is deterministic in the seed") {
    CHECK(split_dataset(50, {}, 3).tags == split_dataset(50, {}, 3).tags);
    CHECK(split_dataset(50, {}, 3).order == split_dataset(50, {}, 3).order);
    CHECK_FALSE(split_dataset(50, {}, 3).order == split_dataset(50, {}, 4).order);
    CHECK_THROWS_AS(split_dataset(2, {}, 1), ValueError);
    CHECK_THROWS_AS(split_dataset(10, {0.5, 0.1, 0.1}, 1), ValueError);
    CHECK_THROWS_AS(split_dataset(10, {0.9, 0.1, 0.0}, 1), ValueError);
}

TEST_CASE("resize examples") {
    Tensor img = random_tensor({3, 5, 7}, 1, 0, 1);
    CHECK(resize_bilinear(img, 5, 7) == img);

    Tensor flat({2, 3, 3}, 0.4);
    Tensor big = resize_bilinear(flat, 11, 4);
    CHECK(big.shape() == Shape{2, 11, 4});
    for (double v : big.data()) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));

    Tensor row({1, 1, 2}, {0, 1});
    CHECK(resize_bilinear(row, 1, 4) == Tensor({1, 1, 4}, {0, 0.25, 0.75, 1}));
}

TEST_CASE("resize output stays within the input range") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9);
        Tensor img = random_tensor({3, h, w}, seed, -1, 2);
        auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
        Tensor out = resize_bilinear(img, 1 + rng.below(17), 1 + rng.below(17));
        for (double v : out.data()) {
            CHECK(v >= *lo);
            CHECK(v <= *hi);
        }
    }
}

TEST_CASE("augmentation examples and properties") {
    Tensor img = random_tensor({3, 4, 6}, 2, 0, 1);
    CHECK(flip_horizontal(flip_horizontal(img)) == img);
    CHECK(flip_vertical(flip_vertical(img)) == img);
    CHECK(flip_horizontal(img).at({1, 2, 0}) == img.at({1, 2, 5}));
    CHECK(flip_vertical(img).at({1, 0, 3}) == img.at({1, 3, 3}));

    AugmentSpec off;
    off.enabled = false;
    Rng r0(1);
    CHECK(augment(img, off, r0) == img);

    std::set<std::string> seen;
    for (std::uint64_t seed = 1; seed <= 64; ++seed) {
        Rng rng(seed);
        Tensor out = augment(img, AugmentSpec{}, rng);
        CHECK(out.shape() == img.shape());
        CHECK(values(out) == values(img));
        auto a = channel_sums(out), b = channel_sums(img);
        // A flip permutes each channel; summation order differs so compare sets.
        for (std::size_t c = 0; c < 3; ++c) CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-15));
        std::string key = out == img ? "id" : out == flip_horizontal(img) ? "h" : out == flip_vertical(img) ? "v" : "hv";
        CHECK((key != "hv" || out == flip_vertical(flip_horizontal(img))));
        seen.insert(key);
    }
    CHECK(seen.size() == 4);
}

TEST_CASE("augmented batches are reproducible and keep labels") {
    Dataset ds = synth_dataset({.classes = 3, .per_class = 4, .size = 16, .noise = 0.05, .seed = 1});
    std::vector<std::size_t> idx{0, 5, 11, 2};
    Batch a = make_augmented_batch(ds.samples, idx, AugmentSpec{}, 7, 3);
    Batch b = make_augmented_batch(ds.samples, idx, AugmentSpec{}, 7, 3);
    CHECK(a.images == b.images);
    CHECK(a.labels == std::vector<int>{0, 1, 2, 0});
    Batch plain = make_batch(ds.samples, idx);
    CHECK(plain.labels == a.labels);
    CHECK(plain.images.shape() == Shape{4, 3, 16, 16});
    CHECK(augment_seed(7, 3, 5) != augment_seed(7, 4, 5));
    CHECK(augment_seed(7, 3, 5) != augment_seed(7, 3, 6));
}

TEST_CASE("batch iterator") {
    auto b = make_batches(40, 16, 1, 0);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 16);
    CHECK(b[1].size() == 16);
    CHECK(b[2].size() == 8);
    std::vector<std::size_t> all;
    for (auto& x : b) all.insert(all.end(), x.begin(), x.end());
    std::vector<std::size_t> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 40; ++i) CHECK(sorted[i] == i);

    CHECK(make_batches(40, 16, 1, 0) == b);
    CHECK_FALSE(make_batches(40, 16, 1, 1) == b);
    CHECK(make_batches(5, 16, 1, 0).size() == 1);
    CHECK_THROWS_AS(make_batches(0, 16, 1, 0), ValueError);
    CHECK_THROWS_AS(make_batches(10, 0, 1, 0), ValueError);
}

TEST_CASE("synthetic dataset counts and determinism") {
    Dataset ds = synth_dataset({.classes = 5, .per_class = 100, .size = 16, .noise = 0.05, .seed = 1});
    CHECK(ds.size() == 500);
    std::map<int, int> per;
    for (const Sample& s : ds.samples) {
        ++per[s.label];
        CHECK(s.image.shape() == Shape{3, 16, 16});
        for (double v : s.image.data()) CHECK((v >= 0.0 && v <= 1.0));
    }
    for (int c = 0; c < 5; ++c) CHECK(per[c] == 100);
    CHECK(std::is_sorted(ds.class_names.begin(), ds.class_names.end()));

    CHECK(synth_image(2, 7, 16, 0.0, 1) == synth_image(2, 7, 16, 0.0, 1));
    CHECK(synth_image(2, 7, 16, 0.3, 1) == synth_image(2, 7, 16, 0.3, 1));
    CHECK_FALSE(synth_image(2, 7, 16, 0.0, 1) == synth_image(2, 8, 16, 0.0, 1));

    CHECK_THROWS_AS(synth_dataset({.classes = 1}), ValueError);
    CHECK_THROWS_AS(synth_dataset({.classes = 11}), ValueError);
    CHECK_THROWS_AS(synth_dataset({.classes = 5, .pattern_offset = 6}), ValueError);
    CHECK_NOTHROW(synth_dataset({.classes = 10, .per_class = 1, .size = 8}));

    Dataset shifted = synth_dataset({.classes = 5, .per_class = 1, .size = 8, .pattern_offset = 5});
    for (const std::string& n : shifted.class_names)
        for (const std::string& m : synth_dataset({.classes = 5, .per_class = 1, .size = 8}).class_names) CHECK(n != m);
}

TEST_CASE("nearest-centroid baseline separates the synthetic classes") {
    for (std::size_t offset : {0, 5}) {
        Dataset fit = synth_dataset({.classes = 5, .per_class = 100, .size = 64, .noise = 0.05, .seed = 1, .pattern_offset = offset});
        Dataset eval = synth_dataset({.classes = 5, .per_class = 100, .size = 64, .noise = 0.05, .seed = 2, .pattern_offset = offset});
        double acc = oracle::nearest_centroid_accuracy(fit, eval);
        INFO("offset " << offset << " accuracy " << acc);
        CHECK(acc > 0.95);
    }
}

TEST_CASE("synth -> files -> load round trip is lossless") {
    Dataset ds = synth_dataset({.classes = 3, .per_class = 4, .size = 12, .noise = 0.1, .seed = 9});
    TempDir dir("synth");
    write_dataset(ds, dir.path());
    std::string manifest = testing::read_file(dir / "manifest.tsv");
    CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 12);
    Dataset back = load_dataset(dir / "manifest.tsv");
    REQUIRE(back.size() == ds.size());
    CHECK(back.class_names == ds.class_names);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].image == ds.samples[i].image);
    }
}
