#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "atx/augment.hpp"
#include "atx/image.hpp"
#include "atx/manifest.hpp"
#include "atx/synthetic.hpp"

using namespace atx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("atx_data_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

}  // namespace

TEST(Manifest, ParsesFourStateLabels) {
    auto dir = temp_dir("parse");
    write_file(dir / "m.csv",
               "image_path,patient_id,ca,cb\n"
               "a.pgm,p1,1,0\n"
               "b.pgm,p1,-1,\n"
               "c.pgm,p2,0,1\n");
    auto m = load_manifest((dir / "m.csv").string());
    ASSERT_EQ(m.records.size(), 3u);
    EXPECT_EQ(m.task, TaskKind::multilabel_binary);
    EXPECT_EQ(m.class_names, (std::vector<std::string>{"ca", "cb"}));
    EXPECT_EQ(m.records[1].labels[0], LabelState::uncertain);
    EXPECT_EQ(m.records[1].labels[1], LabelState::missing);
    EXPECT_EQ(m.records[2].labels[1], LabelState::positive);
}

TEST(Manifest, HeaderOnlyIsEmptyManifest) {
    auto dir = temp_dir("empty");
    write_file(dir / "m.csv", "image_path,patient_id,ca\n");
    auto m = load_manifest((dir / "m.csv").string());
    EXPECT_TRUE(m.records.empty());
    EXPECT_EQ(m.n_classes, 1);
}

TEST(Manifest, RejectsUnknownLabelTokenWithLineNumber) {
    auto dir = temp_dir("badtok");
    write_file(dir / "m.csv",
               "image_path,patient_id,ca\n"
               "a.pgm,p1,1\n"
               "b.pgm,p2,2\n");
    try {
        load_manifest((dir / "m.csv").string());
        FAIL() << "expected parse error";
    } catch (const ManifestError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("'2'"), std::string::npos);
    }
}

TEST(Manifest, RejectsDuplicatePathAndBadFieldCount) {
    auto dir = temp_dir("dup");
    write_file(dir / "m.csv",
               "image_path,patient_id,ca\n"
               "a.pgm,p1,1\n"
               "a.pgm,p2,0\n");
    EXPECT_THROW(load_manifest((dir / "m.csv").string()), ManifestError);
    write_file(dir / "m2.csv",
               "image_path,patient_id,ca\n"
               "a.pgm,p1\n");
    EXPECT_THROW(load_manifest((dir / "m2.csv").string()), ManifestError);
}

TEST(Manifest, MulticlassVariant) {
    auto dir = temp_dir("mc");
    write_file(dir / "m.csv",
               "image_path,patient_id,class_index\n"
               "a.pgm,p1,0\n"
               "b.pgm,p2,4\n");
    auto m = load_manifest((dir / "m.csv").string());
    EXPECT_EQ(m.task, TaskKind::multiclass);
    EXPECT_EQ(m.n_classes, 5);
    write_file(dir / "bad.csv",
               "image_path,patient_id,class_index\n"
               "a.pgm,p1,x\n");
    EXPECT_THROW(load_manifest((dir / "bad.csv").string()), ManifestError);
}

TEST(UZero, MappingRule) {
    std::vector<LabelState> raw{LabelState::positive, LabelState::uncertain, LabelState::negative,
                                LabelState::missing};
    EXPECT_EQ(map_labels_uzero(raw), (std::vector<float>{1, 0, 0, 0}));
    std::vector<LabelState> all_pos(4, LabelState::positive);
    EXPECT_EQ(map_labels_uzero(all_pos), (std::vector<float>{1, 1, 1, 1}));
    std::vector<LabelState> all_missing(4, LabelState::missing);
    EXPECT_EQ(map_labels_uzero(all_missing), (std::vector<float>{0, 0, 0, 0}));
}

TEST(UZero, Idempotent) {
    // re-encoding a mapped vector as label states and mapping again is a no-op
    std::vector<LabelState> raw{LabelState::positive, LabelState::uncertain, LabelState::missing};
    auto once = map_labels_uzero(raw);
    std::vector<LabelState> reencoded;
    for (float v : once)
        reencoded.push_back(v == 1.f ? LabelState::positive : LabelState::negative);
    EXPECT_EQ(map_labels_uzero(reencoded), once);
}

namespace {

DatasetManifest synthetic_manifest(int n_patients, int per_patient) {
    DatasetManifest m;
    m.task = TaskKind::multilabel_binary;
    m.class_names = {"c"};
    m.n_classes = 1;
    for (int p = 0; p < n_patients; ++p)
        for (int k = 0; k < per_patient; ++k) {
            ManifestRecord r;
            r.image_path = "img_" + std::to_string(p) + "_" + std::to_string(k) + ".pgm";
            r.patient_id = "p" + std::to_string(p);
            r.labels = {LabelState::positive};
            m.records.push_back(r);
        }
    return m;
}

}  // namespace

TEST(Split, FractionsAndDisjointness) {
    auto m = synthetic_manifest(10, 2);
    auto s = split_by_patient(m, SplitRequest::fractions(0.6, 0.2, 0.2), 7);
    EXPECT_EQ(s.train.size(), 12u);
    EXPECT_EQ(s.validation.size(), 4u);
    EXPECT_EQ(s.test.size(), 4u);
    for (const auto& p : s.train_patients) {
        EXPECT_FALSE(s.val_patients.count(p));
        EXPECT_FALSE(s.test_patients.count(p));
    }
    EXPECT_EQ(s.train.size() + s.validation.size() + s.test.size(), m.records.size());
}

TEST(Split, SameSeedIdentical) {
    auto m = synthetic_manifest(20, 3);
    auto a = split_by_patient(m, SplitRequest::fractions(0.5, 0.25, 0.25), 99);
    auto b = split_by_patient(m, SplitRequest::fractions(0.5, 0.25, 0.25), 99);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_EQ(a.test, b.test);
    auto c = split_by_patient(m, SplitRequest::fractions(0.5, 0.25, 0.25), 100);
    EXPECT_NE(a.train, c.train);  // different seed reshuffles (overwhelmingly likely)
}

TEST(Split, SkewPatientOvershootsWholePatient) {
    // one patient holds 50% of images; train fraction 0.4 must overshoot
    // rather than split the patient
    DatasetManifest m;
    m.task = TaskKind::multilabel_binary;
    m.class_names = {"c"};
    m.n_classes = 1;
    for (int k = 0; k < 10; ++k) {
        ManifestRecord r;
        r.image_path = "big_" + std::to_string(k) + ".pgm";
        r.patient_id = "whale";
        r.labels = {LabelState::positive};
        m.records.push_back(r);
    }
    for (int p = 0; p < 10; ++p) {
        ManifestRecord r;
        r.image_path = "small_" + std::to_string(p) + ".pgm";
        r.patient_id = "p" + std::to_string(p);
        r.labels = {LabelState::positive};
        m.records.push_back(r);
    }
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto s = split_by_patient(m, SplitRequest::fractions(0.4, 0.3, 0.3), seed);
        bool whale_in_train = s.train_patients.count("whale") > 0;
        if (whale_in_train && s.train.size() > 8) {
            EXPECT_GE(s.train.size(), 10u);
        }
        int owners = s.train_patients.count("whale") + s.val_patients.count("whale") +
                     s.test_patients.count("whale");
        EXPECT_EQ(owners, 1);
    }
}

TEST(Split, InfeasibleCountsError) {
    auto m = synthetic_manifest(5, 2);
    EXPECT_THROW(split_by_patient(m, SplitRequest::counts(8, 4, 4), 1), std::invalid_argument);
    EXPECT_NO_THROW(split_by_patient(m, SplitRequest::counts(6, 2, 2), 1));
}

TEST(Split, FuzzedManifestsStayDisjoint) {
    std::mt19937 rng(31);
    std::uniform_int_distribution<int> np(1, 40), ni(1, 4);
    for (int k = 0; k < 100; ++k) {
        auto m = synthetic_manifest(np(rng), ni(rng));
        auto s = split_by_patient(m, SplitRequest::fractions(0.6, 0.2, 0.2), rng());
        size_t assigned = s.train.size() + s.validation.size() + s.test.size();
        EXPECT_EQ(assigned, m.records.size());
        for (const auto& p : s.train_patients) {
            EXPECT_EQ(s.val_patients.count(p), 0u);
            EXPECT_EQ(s.test_patients.count(p), 0u);
        }
        for (const auto& p : s.val_patients) EXPECT_EQ(s.test_patients.count(p), 0u);
    }
}

namespace {

Image gradient_image(int h, int w) {
    Image img;
    img.height = h;
    img.width = w;
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.pixels[static_cast<size_t>(y) * w + x] = static_cast<uint8_t>((x * 7 + y * 3) % 256);
    return img;
}

}  // namespace

TEST(ImageCodec, PgmRoundTrip) {
    auto dir = temp_dir("pgm");
    auto img = gradient_image(9, 13);
    encode_pgm((dir / "t.pgm").string(), img);
    auto back = decode_pgm((dir / "t.pgm").string());
    EXPECT_EQ(back.height, 9);
    EXPECT_EQ(back.width, 13);
    EXPECT_EQ(back.pixels, img.pixels);
}

TEST(ImageCodec, PngRoundTrip) {
    auto dir = temp_dir("png");
    auto img = gradient_image(16, 10);
    encode_png((dir / "t.png").string(), img);
    auto back = decode_png((dir / "t.png").string());
    EXPECT_EQ(back.channels, 1);
    EXPECT_EQ(back.pixels, img.pixels);
}

TEST(ImageCodec, ErrorsCarryPath) {
    try {
        decode_image("/nonexistent/dir/shot.pgm");
        FAIL() << "expected decode error";
    } catch (const ImageError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/shot.pgm"), std::string::npos);
    }
    auto dir = temp_dir("fmt");
    write_file(dir / "x.jpeg", "not an image");
    EXPECT_THROW(decode_image((dir / "x.jpeg").string()), ImageError);
}

TEST(Augment, EvalModeDeterministic) {
    auto img = gradient_image(80, 60);
    AugmentConfig cfg;
    cfg.out_size = 32;
    auto a = augment_eval(img, cfg);
    auto b = augment_eval(img, cfg);
    ASSERT_EQ(a.shape(), (Shape{3, 32, 32}));
    for (int64_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.raw()[i], b.raw()[i]);
}

TEST(Augment, DegenerateTrainEqualsEval) {
    auto img = gradient_image(70, 50);
    AugmentConfig cfg;
    cfg.out_size = 32;
    auto ev = augment_eval(img, cfg);
    auto tr = augment_with(img, cfg, AugmentParams{0.0, false});
    for (int64_t i = 0; i < ev.size(); ++i) ASSERT_EQ(ev.raw()[i], tr.raw()[i]);
}

TEST(Augment, ConstantGrayAtChannelMeanNormalizesToZero) {
    AugmentConfig cfg;
    cfg.out_size = 16;
    cfg.mean = {124.0 / 255.0, 124.0 / 255.0, 124.0 / 255.0};  // byte-exact mean
    Image img;
    img.height = img.width = 16;
    img.channels = 1;
    img.pixels.assign(256, 124);
    auto t = augment_eval(img, cfg);
    for (int64_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t.raw()[i], 0.f, 1e-6f);
}

TEST(Augment, OutputRangeWithinNormalizationBounds) {
    AugmentConfig cfg;
    cfg.out_size = 24;
    const double max_mean = *std::max_element(cfg.mean.begin(), cfg.mean.end());
    const double min_mean = *std::min_element(cfg.mean.begin(), cfg.mean.end());
    const double min_std = *std::min_element(cfg.stddev.begin(), cfg.stddev.end());
    const double lo = (0.0 - max_mean) / min_std, hi = (1.0 - min_mean) / min_std;
    std::mt19937 rng(5);
    for (int k = 0; k < 10; ++k) {
        Image img = gradient_image(40 + k, 30 + k);
        auto t = augment_train(img, cfg, rng);
        for (int64_t i = 0; i < t.size(); ++i) {
            EXPECT_GE(t.raw()[i], lo - 1e-5);
            EXPECT_LE(t.raw()[i], hi + 1e-5);
        }
    }
}

TEST(Augment, FlipIsInvolution) {
    auto img = gradient_image(33, 33);
    AugmentConfig cfg;
    cfg.out_size = 33;
    auto once = augment_with(img, cfg, AugmentParams{0.0, true});
    auto ev = augment_eval(img, cfg);
    // flipping the flipped tensor recovers the eval tensor
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 33; ++y)
            for (int x = 0; x < 33; ++x)
                ASSERT_EQ(once.raw()[(c * 33 + y) * 33 + x], ev.raw()[(c * 33 + y) * 33 + (32 - x)]);
}

TEST(Augment, SampleRngIndependentOfCallOrder) {
    // stream depends only on (seed, epoch, index)
    auto a = sample_rng(42, 3, 17)();
    (void)sample_rng(1, 1, 1)();
    auto b = sample_rng(42, 3, 17)();
    EXPECT_EQ(a, b);
    EXPECT_NE(sample_rng(42, 3, 18)(), a);
    EXPECT_NE(sample_rng(42, 4, 17)(), a);
}

TEST(Synthetic, BalancedAndSelfChecked) {
    auto dir = temp_dir("gen");
    SyntheticSpec spec;
    spec.n_patients = 200;
    spec.images_per_patient = 2;
    spec.image_size = 32;
    spec.n_classes = 2;
    auto rep = generate_synthetic(spec, 11, dir.string());
    EXPECT_EQ(rep.n_images, 400);
    for (int c = 0; c < 2; ++c) {
        EXPECT_GE(rep.positives_per_class[c], 400 * 0.4);
        EXPECT_LE(rep.positives_per_class[c], 400 * 0.6);
    }
    EXPECT_GT(rep.probe_auc, 0.6);
    auto m = load_manifest(rep.manifest_path);
    EXPECT_EQ(m.records.size(), 400u);
    auto img = decode_image((dir / m.records[0].image_path).string());
    EXPECT_EQ(img.height, 32);
}

TEST(Synthetic, DeterministicGivenSeed) {
    auto d1 = temp_dir("gen_a"), d2 = temp_dir("gen_b");
    SyntheticSpec spec;
    spec.n_patients = 30;
    spec.image_size = 24;
    generate_synthetic(spec, 5, d1.string());
    generate_synthetic(spec, 5, d2.string());
    auto m1 = load_manifest((d1 / "manifest.csv").string());
    for (const auto& rec : m1.records) {
        auto a = decode_image((d1 / rec.image_path).string());
        auto b = decode_image((d2 / rec.image_path).string());
        ASSERT_EQ(a.pixels, b.pixels) << rec.image_path;
    }
}

TEST(Synthetic, DomainShiftMovesPixelStatistics) {
    auto d0 = temp_dir("shift0"), d1 = temp_dir("shift1");
    SyntheticSpec spec;
    spec.n_patients = 40;
    spec.image_size = 24;
    spec.domain_shift = 0.0;
    generate_synthetic(spec, 9, d0.string());
    spec.domain_shift = 1.0;
    generate_synthetic(spec, 9, d1.string());
    // histogram-distance oracle: L1 between normalized 256-bin histograms
    auto histogram = [](const fs::path& dir) {
        std::vector<double> h(256, 0.0);
        double total = 0;
        auto m = load_manifest((dir / "manifest.csv").string());
        for (const auto& rec : m.records) {
            auto img = decode_image((dir / rec.image_path).string());
            for (uint8_t v : img.pixels) {
                h[v] += 1;
                total += 1;
            }
        }
        for (auto& v : h) v /= total;
        return h;
    };
    auto h0 = histogram(d0), h1 = histogram(d1);
    double dist = 0;
    for (int i = 0; i < 256; ++i) dist += std::abs(h0[i] - h1[i]);
    EXPECT_GT(dist, 0.05);
    // labels unchanged by the shift
    auto m0 = load_manifest((d0 / "manifest.csv").string());
    auto m1 = load_manifest((d1 / "manifest.csv").string());
    for (size_t i = 0; i < m0.records.size(); ++i)
        ASSERT_EQ(m0.records[i].labels, m1.records[i].labels);
}
