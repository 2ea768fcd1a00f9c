#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "clregime/data.hpp"

using namespace clregime;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    const fs::path dir = fs::temp_directory_path() / "clregime_idx_tests";
    fs::create_directories(dir);
    return dir;
}

void push_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

std::string write_bytes(const std::string& name, const std::vector<unsigned char>& bytes) {
    const fs::path path = tmp_dir() / name;
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    return path.string();
}

std::string valid_labels(const std::string& name, const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> bytes;
    push_be32(bytes, 2049);
    push_be32(bytes, static_cast<std::uint32_t>(labels.size()));
    bytes.insert(bytes.end(), labels.begin(), labels.end());
    return write_bytes(name, bytes);
}

std::string valid_images(const std::string& name, std::uint32_t n, std::uint32_t rows,
                         std::uint32_t cols, const std::vector<unsigned char>& pixels) {
    std::vector<unsigned char> bytes;
    push_be32(bytes, 2051);
    push_be32(bytes, n);
    push_be32(bytes, rows);
    push_be32(bytes, cols);
    bytes.insert(bytes.end(), pixels.begin(), pixels.end());
    return write_bytes(name, bytes);
}

}  // namespace

// --- idx ------------------------------------------------------------------

TEST_CASE("idx loads byte images scaled by 1/255", "[data]") {
    const auto img = valid_images("ok-images", 2, 1, 3, {0, 128, 255, 10, 20, 30});
    const auto lab = valid_labels("ok-labels", {7, 2});
    const Dataset ds = load_idx(img, lab);
    CHECK(ds.size() == 2);
    CHECK(ds.inputs.rows == 2);
    CHECK(ds.inputs.cols == 3);
    CHECK(ds.inputs.at(0, 0) == 0.0);
    CHECK(ds.inputs.at(0, 1) == Catch::Approx(128.0 / 255.0).margin(1e-15));
    CHECK(ds.inputs.at(0, 2) == 1.0);
    CHECK(ds.labels == std::vector<int>{7, 2});
    CHECK(ds.num_classes == 8);
}

TEST_CASE("idx rejects wrong magics with a distinct error", "[data]") {
    std::vector<unsigned char> bad_img;
    push_be32(bad_img, 1234);
    push_be32(bad_img, 1);
    push_be32(bad_img, 1);
    push_be32(bad_img, 1);
    bad_img.push_back(0);
    const auto img = write_bytes("badmagic-images", bad_img);
    const auto lab = valid_labels("badmagic-labels", {0});
    CHECK_THROWS_AS(load_idx(img, lab), IdxBadMagic);

    const auto ok_img = valid_images("okmagic-images", 1, 1, 1, {0});
    std::vector<unsigned char> bad_lab;
    push_be32(bad_lab, 4321);
    push_be32(bad_lab, 1);
    bad_lab.push_back(0);
    const auto lab2 = write_bytes("badmagic2-labels", bad_lab);
    CHECK_THROWS_AS(load_idx(ok_img, lab2), IdxBadMagic);
}

TEST_CASE("idx rejects mismatched counts", "[data]") {
    const auto img = valid_images("mismatch-images", 2, 1, 2, {1, 2, 3, 4});
    const auto lab = valid_labels("mismatch-labels", {0, 1, 2});
    CHECK_THROWS_AS(load_idx(img, lab), IdxCountMismatch);
}

TEST_CASE("idx rejects zero items", "[data]") {
    const auto img = valid_images("empty-images", 0, 1, 2, {});
    const auto lab = valid_labels("empty-labels", {});
    CHECK_THROWS_AS(load_idx(img, lab), IdxEmpty);
}

TEST_CASE("idx rejects truncated files", "[data]") {
    const auto short_header = write_bytes("short-images", {0x00, 0x00});
    const auto lab = valid_labels("short-labels", {0});
    CHECK_THROWS_AS(load_idx(short_header, lab), IdxTruncated);

    // header claims 2 samples of 4 pixels; only one sample present
    const auto img = valid_images("shortdata-images", 2, 2, 2, {1, 2, 3, 4});
    const auto lab2 = valid_labels("shortdata-labels", {0, 1});
    CHECK_THROWS_AS(load_idx(img, lab2), IdxTruncated);

    const auto ok_img = valid_images("shortlab-images", 2, 1, 1, {5, 6});
    std::vector<unsigned char> lab_bytes;
    push_be32(lab_bytes, 2049);
    push_be32(lab_bytes, 2);
    lab_bytes.push_back(0);  // one label missing
    const auto short_lab = write_bytes("shortlab-labels", lab_bytes);
    CHECK_THROWS_AS(load_idx(ok_img, short_lab), IdxTruncated);
}

TEST_CASE("idx reports unopenable paths", "[data]") {
    const auto lab = valid_labels("noimg-labels", {0});
    CHECK_THROWS_AS(load_idx((tmp_dir() / "does-not-exist").string(), lab), IdxError);
}

TEST_CASE("save_idx round-trips byte-quantized data exactly", "[data]") {
    Dataset ds;
    ds.inputs = Matrix(3, 4);
    Rng rng(42);
    for (double& v : ds.inputs.data)
        v = static_cast<double>(rng.next_bounded(256)) / 255.0;  // on the byte grid
    ds.labels = {0, 3, 1};
    ds.num_classes = 4;

    const auto img = (tmp_dir() / "roundtrip-images").string();
    const auto lab = (tmp_dir() / "roundtrip-labels").string();
    save_idx(ds, img, lab);
    const Dataset back = load_idx(img, lab);
    CHECK(back.inputs.rows == 3);
    CHECK(back.inputs.cols == 4);
    CHECK(back.inputs.data == ds.inputs.data);
    CHECK(back.labels == ds.labels);
    CHECK(back.num_classes == 4);
}

TEST_CASE("save_idx quantizes off-grid values by rounding", "[data]") {
    Dataset ds;
    ds.inputs = Matrix(1, 3);
    ds.inputs.at(0, 0) = 0.5;   // rounds to 128
    ds.inputs.at(0, 1) = -0.2;  // clamps to 0
    ds.inputs.at(0, 2) = 1.7;   // clamps to 255
    ds.labels = {0};
    ds.num_classes = 1;
    const auto img = (tmp_dir() / "quantize-images").string();
    const auto lab = (tmp_dir() / "quantize-labels").string();
    save_idx(ds, img, lab);
    const Dataset back = load_idx(img, lab);
    CHECK(back.inputs.at(0, 0) == Catch::Approx(128.0 / 255.0).margin(1e-15));
    CHECK(back.inputs.at(0, 1) == 0.0);
    CHECK(back.inputs.at(0, 2) == 1.0);
}

// --- synthetic generator ----------------------------------------------------

TEST_CASE("synthetic datasets are a pure function of the seed", "[data]") {
    const Dataset a = synth_gaussian_tasks(2, 2, 5, 10, 3.0, 77);
    const Dataset b = synth_gaussian_tasks(2, 2, 5, 10, 3.0, 77);
    CHECK(a.inputs.data == b.inputs.data);
    CHECK(a.labels == b.labels);
    const Dataset c = synth_gaussian_tasks(2, 2, 5, 10, 3.0, 78);
    CHECK(a.inputs.data != c.inputs.data);
}

TEST_CASE("synthetic shapes and labels tile classes in blocks", "[data]") {
    const Dataset ds = synth_gaussian_tasks(3, 2, 4, 7, 1.0, 5);
    CHECK(ds.size() == 3 * 2 * 7);
    CHECK(ds.inputs.cols == 4);
    CHECK(ds.num_classes == 6);
    for (std::size_t s = 0; s < ds.size(); ++s) CHECK(ds.labels[s] == static_cast<int>(s / 7));
}

TEST_CASE("zero separation collapses all class means to the origin", "[data]") {
    const std::size_t n = 400;
    const Dataset ds = synth_gaussian_tasks(1, 2, 3, n, 0.0, 9);
    // both classes should have near-zero sample means
    for (int k = 0; k < 2; ++k) {
        ParamVector mean(3, 0.0);
        for (std::size_t s = 0; s < ds.size(); ++s) {
            if (ds.labels[s] != k) continue;
            for (std::size_t j = 0; j < 3; ++j) mean[j] += ds.inputs.at(s, j);
        }
        for (double& m : mean) m /= static_cast<double>(n);
        for (double m : mean) CHECK(std::abs(m) < 0.25);
    }
}

TEST_CASE("separation scales the distance between class means", "[data]") {
    const Dataset near = synth_gaussian_tasks(1, 2, 6, 200, 1.0, 11);
    const Dataset far = synth_gaussian_tasks(1, 2, 6, 200, 8.0, 11);
    auto mean_gap = [](const Dataset& ds) {
        ParamVector m0(ds.inputs.cols, 0.0), m1(ds.inputs.cols, 0.0);
        std::size_t n0 = 0, n1 = 0;
        for (std::size_t s = 0; s < ds.size(); ++s) {
            auto& m = ds.labels[s] == 0 ? m0 : m1;
            (ds.labels[s] == 0 ? n0 : n1) += 1;
            for (std::size_t j = 0; j < ds.inputs.cols; ++j) m[j] += ds.inputs.at(s, j);
        }
        double gap = 0.0;
        for (std::size_t j = 0; j < m0.size(); ++j) {
            const double d = m0[j] / static_cast<double>(n0) - m1[j] / static_cast<double>(n1);
            gap += d * d;
        }
        return std::sqrt(gap);
    };
    CHECK(mean_gap(far) > 4.0 * mean_gap(near));
}

TEST_CASE("well-separated synthetic classes are linearly separable", "[data]") {
    // independent oracle: plain logistic regression trained in the test
    const Dataset ds = synth_gaussian_tasks(1, 2, 8, 60, 10.0, 13);
    const TaskSplit split = split_tasks(ds, 1, 2, 0.25, 13);
    const TaskBundle bundle = build_task_datasets(ds, split);
    const TaskData& train = bundle.train[0];
    const TaskData& test = bundle.test[0];

    ParamVector w(8, 0.0);
    double b = 0.0;
    const double lr = 0.5;
    for (int iter = 0; iter < 300; ++iter) {
        ParamVector gw(8, 0.0);
        double gb = 0.0;
        for (std::size_t s = 0; s < train.size(); ++s) {
            double z = b;
            for (std::size_t j = 0; j < 8; ++j) z += w[j] * train.inputs.at(s, j);
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double err = p - static_cast<double>(train.labels[s]);
            for (std::size_t j = 0; j < 8; ++j) gw[j] += err * train.inputs.at(s, j);
            gb += err;
        }
        for (std::size_t j = 0; j < 8; ++j) w[j] -= lr * gw[j] / static_cast<double>(train.size());
        b -= lr * gb / static_cast<double>(train.size());
    }
    std::size_t correct = 0;
    for (std::size_t s = 0; s < test.size(); ++s) {
        double z = b;
        for (std::size_t j = 0; j < 8; ++j) z += w[j] * test.inputs.at(s, j);
        if ((z > 0.0 ? 1 : 0) == test.labels[s]) ++correct;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(test.size()) >= 0.99);
}

TEST_CASE("synthetic generator validates its arguments", "[data]") {
    CHECK_THROWS_AS(synth_gaussian_tasks(0, 2, 3, 5, 1.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth_gaussian_tasks(1, 2, 0, 5, 1.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth_gaussian_tasks(1, 2, 3, 5, -1.0, 1), std::invalid_argument);
}

// --- task splitting ----------------------------------------------------------

TEST_CASE("task t owns the contiguous class block [tC, (t+1)C)", "[data]") {
    const Dataset ds = synth_gaussian_tasks(4, 2, 3, 10, 1.0, 17);
    const TaskSplit split = split_tasks(ds, 4, 2, 0.3, 17);
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t idx : split.train[t]) {
            CHECK(ds.labels[idx] >= static_cast<int>(2 * t));
            CHECK(ds.labels[idx] < static_cast<int>(2 * t + 2));
        }
        for (std::size_t idx : split.test[t]) {
            CHECK(ds.labels[idx] >= static_cast<int>(2 * t));
            CHECK(ds.labels[idx] < static_cast<int>(2 * t + 2));
        }
    }
    // task 3 sees global classes 6 and 7
    std::set<int> task3_classes;
    for (std::size_t idx : split.train[3]) task3_classes.insert(ds.labels[idx]);
    for (std::size_t idx : split.test[3]) task3_classes.insert(ds.labels[idx]);
    CHECK(task3_classes == std::set<int>{6, 7});
}

TEST_CASE("split partitions every owned sample exactly once", "[data]") {
    const Dataset ds = synth_gaussian_tasks(3, 2, 3, 9, 1.0, 19);
    const TaskSplit split = split_tasks(ds, 3, 2, 0.25, 19);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t idx : split.train[t]) {
            CHECK(seen.insert(idx).second);
            ++total;
        }
        for (std::size_t idx : split.test[t]) {
            CHECK(seen.insert(idx).second);
            ++total;
        }
    }
    CHECK(total == ds.size());
    // round(9 * 0.25) = 2 test samples per class
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(split.test[t].size() == 4);
        CHECK(split.train[t].size() == 14);
    }
}

TEST_CASE("split is deterministic in the seed and keeps both sides nonempty", "[data]") {
    const Dataset ds = synth_gaussian_tasks(2, 2, 3, 4, 1.0, 23);
    const TaskSplit a = split_tasks(ds, 2, 2, 0.5, 23);
    const TaskSplit b = split_tasks(ds, 2, 2, 0.5, 23);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    // extreme fraction still leaves one training sample per class
    const TaskSplit tight = split_tasks(ds, 2, 2, 0.99, 23);
    for (std::size_t t = 0; t < 2; ++t) CHECK(tight.train[t].size() >= 2);
}

TEST_CASE("split validates fraction and class budget", "[data]") {
    const Dataset ds = synth_gaussian_tasks(2, 2, 3, 4, 1.0, 29);
    CHECK_THROWS_AS(split_tasks(ds, 2, 2, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_tasks(ds, 2, 2, 1.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_tasks(ds, 3, 2, 0.25, 1), std::invalid_argument);  // needs 6 classes

    Dataset tiny;
    tiny.inputs = Matrix(2, 2);
    tiny.labels = {0, 1};  // class 1 has a single sample
    tiny.num_classes = 2;
    CHECK_THROWS_AS(split_tasks(tiny, 1, 2, 0.5, 1), std::invalid_argument);
}

TEST_CASE("bundles re-index labels into the per-task range", "[data]") {
    const Dataset ds = synth_gaussian_tasks(3, 2, 3, 6, 1.0, 31);
    const TaskSplit split = split_tasks(ds, 3, 2, 0.25, 31);
    const TaskBundle bundle = build_task_datasets(ds, split);
    REQUIRE(bundle.train.size() == 3);
    REQUIRE(bundle.test.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(bundle.train[t].task_id == static_cast<int>(t));
        CHECK(bundle.test[t].task_id == static_cast<int>(t));
        for (int y : bundle.train[t].labels) {
            CHECK(y >= 0);
            CHECK(y < 2);
        }
        for (int y : bundle.test[t].labels) {
            CHECK(y >= 0);
            CHECK(y < 2);
        }
        CHECK(bundle.train[t].size() == split.train[t].size());
        CHECK(bundle.train[t].inputs.cols == 3);
    }
    // row content matches the source dataset
    const std::size_t src = split.train[1][0];
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(bundle.train[1].inputs.at(0, j) == ds.inputs.at(src, j));
    CHECK(bundle.train[1].labels[0] == ds.labels[src] - 2);
}

// --- task orders --------------------------------------------------------------

TEST_CASE("order zero is the canonical identity", "[data]") {
    const auto orders = sample_orders(5, 3, 7);
    REQUIRE(orders.size() == 4);
    CHECK(orders[0].perm == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(orders[0].is_canonical);
    CHECK(orders[0].order_id == 0);
    for (std::size_t i = 1; i < orders.size(); ++i) {
        CHECK_FALSE(orders[i].is_canonical);
        CHECK(orders[i].order_id == static_cast<int>(i));
    }
}

TEST_CASE("every sampled order is a permutation", "[data]") {
    const auto orders = sample_orders(6, 20, 99);
    for (const auto& order : orders) {
        std::set<std::size_t> seen(order.perm.begin(), order.perm.end());
        CHECK(seen.size() == 6);
        CHECK(*seen.begin() == 0);
        CHECK(*seen.rbegin() == 5);
    }
}

TEST_CASE("orders are deterministic in the seed", "[data]") {
    const auto a = sample_orders(5, 10, 7);
    const auto b = sample_orders(5, 10, 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].perm == b[i].perm);
    const auto c = sample_orders(5, 10, 8);
    bool any_different = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].perm != c[i].perm) any_different = true;
    CHECK(any_different);
}

TEST_CASE("duplicate random orders are kept as sampled", "[data]") {
    // with two tasks there are only two permutations, so 10 draws repeat
    const auto orders = sample_orders(2, 10, 3);
    CHECK(orders.size() == 11);
    std::set<std::vector<std::size_t>> distinct;
    for (const auto& order : orders) distinct.insert(order.perm);
    CHECK(distinct.size() <= 2);
}

TEST_CASE("sample_orders validates task count", "[data]") {
    CHECK_THROWS_AS(sample_orders(0, 3, 1), std::invalid_argument);
    const auto single = sample_orders(1, 2, 1);
    CHECK(single.size() == 3);
    for (const auto& order : single) CHECK(order.perm == std::vector<std::size_t>{0});
}
