#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "test_util.hpp"
#include "timemixer/checkpoint.hpp"
#include "timemixer/model.hpp"

using namespace timemixer;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.input_len = 8;
    cfg.pred_len = 4;
    cfg.channels = 2;
    cfg.num_scales = 1;
    cfg.num_layers = 1;
    cfg.d_model = 4;
    cfg.decomposition.kernel = 3;
    return cfg;
}

void zero_all_but_embedding(TimeMixerModel& model) {
    for (const auto& [name, t] : model.named_parameters()) {
        if (name.rfind("embedding.", 0) == 0 || name.rfind("predictor.", 0) == 0) continue;
        Tensor p = t;
        std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
    }
}

}  // namespace

TEST_CASE("config validation names P and M when downsampling bottoms out", "[model][config]") {
    ModelConfig cfg = tiny_config();
    cfg.input_len = 7;
    cfg.num_scales = 3;  // floor(7/8) = 0
    try {
        cfg.validate();
        FAIL("expected config error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("7") != std::string::npos);
        REQUIRE(msg.find("3") != std::string::npos);
    }
}

TEST_CASE("scale lengths follow floor(P/2^m)", "[model][property]") {
    for (std::int64_t P : {12, 96, 336}) {
        for (std::int64_t M : {0, 1, 2, 3}) {
            ModelConfig cfg = tiny_config();
            cfg.input_len = P;
            cfg.num_scales = M;
            cfg.validate();
            auto model = TimeMixerModel::init(cfg, 1);
            Rng rng(9);
            auto x = testutil::random_tensor({2, P, cfg.channels}, rng);
            auto scales = model.downsample_multiscale(x);
            REQUIRE(scales.size() == static_cast<std::size_t>(M + 1));
            std::int64_t expect = P;
            for (std::int64_t m = 0; m <= M; ++m) {
                REQUIRE(scales[static_cast<std::size_t>(m)].dim(1) == expect);
                expect /= 2;
            }
        }
    }
}

TEST_CASE("downsampling keeps constants constant and M=0 is the identity", "[model]") {
    ModelConfig cfg = tiny_config();
    cfg.input_len = 12;
    cfg.num_scales = 2;
    auto model = TimeMixerModel::init(cfg, 1);
    auto x = Tensor::full({1, 12, 2}, 4.25);
    for (const auto& s : model.downsample_multiscale(x))
        for (double v : s.data()) REQUIRE(v == 4.25);

    cfg.num_scales = 0;
    auto m0 = TimeMixerModel::init(cfg, 1);
    auto scales = m0.downsample_multiscale(x);
    REQUIRE(scales.size() == 1);
    REQUIRE(scales[0].node() == x.node());
}

TEST_CASE("embedding is a shared per-time-step projection", "[model][embed]") {
    ModelConfig cfg = tiny_config();
    cfg.channels = 2;
    cfg.d_model = 4;
    auto model = TimeMixerModel::init(cfg, 5);

    SECTION("identity block and zero bias pass channels through") {
        Tensor w = model.parameter("embedding.weight");  // [C, d_model]
        auto& wd = w.mutable_data();
        std::fill(wd.begin(), wd.end(), 0.0);
        for (std::int64_t c = 0; c < cfg.channels; ++c) wd[c * cfg.d_model + c] = 1.0;
        Tensor b = model.parameter("embedding.bias");
        std::fill(b.mutable_data().begin(), b.mutable_data().end(), 0.0);

        Rng rng(2);
        auto x = testutil::random_tensor({2, cfg.input_len, cfg.channels}, rng);
        auto feats = model.embed(model.downsample_multiscale(x), {});
        for (std::int64_t bb = 0; bb < 2; ++bb)
            for (std::int64_t t = 0; t < cfg.input_len; ++t)
                for (std::int64_t c = 0; c < cfg.channels; ++c)
                    REQUIRE(feats[0].data()[(bb * cfg.input_len + t) * cfg.d_model + c] ==
                            x.data()[(bb * cfg.input_len + t) * cfg.channels + c]);
    }

    SECTION("zero input broadcasts the bias everywhere") {
        Tensor b = model.parameter("embedding.bias");
        for (std::size_t i = 0; i < b.mutable_data().size(); ++i)
            b.mutable_data()[i] = 0.5 * static_cast<double>(i + 1);
        auto x = Tensor::zeros({1, cfg.input_len, cfg.channels});
        auto feats = model.embed(model.downsample_multiscale(x), {});
        for (const auto& f : feats)
            for (std::int64_t t = 0; t < f.dim(1); ++t)
                for (std::int64_t d = 0; d < cfg.d_model; ++d)
                    REQUIRE(f.data()[t * cfg.d_model + d] == b.data()[static_cast<std::size_t>(d)]);
    }

    SECTION("every scale embeds to [B, T_m, d_model]") {
        Rng rng(3);
        auto x = testutil::random_tensor({3, cfg.input_len, cfg.channels}, rng);
        auto feats = model.embed(model.downsample_multiscale(x), {});
        for (std::size_t m = 0; m < feats.size(); ++m) {
            REQUIRE(feats[m].dim(0) == 3);
            REQUIRE(feats[m].dim(1) == cfg.scale_len(static_cast<std::int64_t>(m)));
            REQUIRE(feats[m].dim(2) == cfg.d_model);
        }
    }
}

TEST_CASE("forward produces [B,F,C] for the reference configuration", "[model][shape]") {
    ModelConfig cfg;
    cfg.input_len = 96;
    cfg.pred_len = 96;
    cfg.channels = 7;
    cfg.num_scales = 3;
    cfg.num_layers = 2;
    cfg.d_model = 16;
    auto model = TimeMixerModel::init(cfg, 42);
    Rng rng(1);
    auto x = testutil::random_tensor({2, 96, 7}, rng);
    auto y = model.forward(x);
    REQUIRE(y.shape() == Shape{2, 96, 7});
}

TEST_CASE("zeroed mixing and feed-forward weights make PDM the identity", "[model][property]") {
    for (int ablation_case : {1, 10}) {
        ModelConfig cfg = tiny_config();
        cfg.num_scales = 2;
        cfg.input_len = 16;
        cfg.ablation = AblationConfig::table_case(ablation_case);
        auto model = TimeMixerModel::init(cfg, 7);
        zero_all_but_embedding(model);
        Rng rng(4);
        auto x = testutil::random_tensor({2, 16, 2}, rng);
        auto feats = model.embed(model.downsample_multiscale(x), {});
        auto out = model.pdm_block(feats, 0);
        for (std::size_t m = 0; m < feats.size(); ++m) REQUIRE(out[m].data() == feats[m].data());
    }
}

TEST_CASE("decomposition alone is neutral when mixing is off and FF is zero",
          "[model][property]") {
    ModelConfig cfg = tiny_config();
    cfg.num_scales = 2;
    cfg.input_len = 16;
    cfg.ablation.seasonal_mixing = MixDirection::none;
    cfg.ablation.trend_mixing = MixDirection::none;
    auto model = TimeMixerModel::init(cfg, 7);
    zero_all_but_embedding(model);
    Rng rng(4);
    auto x = testutil::random_tensor({2, 16, 2}, rng);
    auto feats = model.embed(model.downsample_multiscale(x), {});
    auto out = model.pdm_block(feats, 0);
    // seasonal + trend recombines to the input features, FF(0 weights) = 0,
    // so the residual is the whole story even though decomposition ran
    for (std::size_t m = 0; m < feats.size(); ++m) REQUIRE(out[m].data() == feats[m].data());
}

TEST_CASE("bottom-up seasonal mixing chains already-updated scales", "[model][mixing]") {
    // Constructed weights make the chain observable: with the temporal mix
    // acting as a doubling map from each finer scale, scale 2 must see the
    // scale-1 update, not the original scale-1 component.
    ModelConfig cfg = tiny_config();
    cfg.input_len = 8;
    cfg.num_scales = 2;  // lengths 8, 4, 2
    cfg.channels = 1;
    cfg.d_model = 1;
    cfg.decomposition.kernel = 1;  // trend = x, seasonal = 0 after k=1 mean? no: k=1 mean = x
    auto model = TimeMixerModel::init(cfg, 3);

    // Make decomposition put everything into the seasonal stream: kernel 1
    // gives trend == x, seasonal == 0, which would hide the chain; use the
    // undecomposed path instead to observe pure mixing order.
    cfg.ablation = AblationConfig::table_case(8);  // no decomposition, bottom-up mixing
    model = TimeMixerModel::init(cfg, 3);
    zero_all_but_embedding(model);

    // embedding = identity-ish: C=1, d_model=1, weight=1, bias=0
    Tensor ew = model.parameter("embedding.weight");
    ew.mutable_data()[0] = 1.0;
    Tensor eb = model.parameter("embedding.bias");
    eb.mutable_data()[0] = 0.0;

    // mixing pair p: w1 averages the finer scale onto the coarser length
    // (every output = mean of inputs via constant row), w2 = identity.
    // With GELU between the two linears exact algebra is messy, so instead
    // probe the ORDER: make pair 0 produce a large constant, and make pair 1
    // sensitive to it. If mixing used the stale scale-1 value, pair 1 would
    // see a small input instead.
    auto set_mix = [&](const std::string& prefix, double w1_scale) {
        Tensor w1 = model.parameter(prefix + ".w1");
        for (auto& v : w1.mutable_data()) v = w1_scale;
        Tensor w2 = model.parameter(prefix + ".w2");
        auto& w2d = w2.mutable_data();
        std::fill(w2d.begin(), w2d.end(), 0.0);
        const std::int64_t n = w2.dim(0);
        for (std::int64_t i = 0; i < n; ++i) w2d[i * n + i] = 1.0;
    };
    set_mix("pdm.0.mix.0", 1.0);
    set_mix("pdm.0.mix.1", 1.0);

    // the mixed components reach the block output only through the
    // feed-forward, so make FF a positive passthrough: FF(x) = gelu(x) ~ x
    // for x >> 0 (d_model=1, d_ff=4, only the first hidden unit active)
    Tensor ffw1 = model.parameter("pdm.0.ff.w1");
    std::fill(ffw1.mutable_data().begin(), ffw1.mutable_data().end(), 0.0);
    ffw1.mutable_data()[0] = 1.0;
    Tensor ffw2 = model.parameter("pdm.0.ff.w2");
    std::fill(ffw2.mutable_data().begin(), ffw2.mutable_data().end(), 0.0);
    ffw2.mutable_data()[0] = 1.0;

    auto x = Tensor::full({1, 8, 1}, 1.0);
    auto feats = model.embed(model.downsample_multiscale(x), {});
    auto out = model.pdm_block(feats, 0);

    // mixing chain: scale1 becomes 1 + gelu(8) ~ 9; scale2 sees the UPDATED
    // scale1 and becomes 1 + gelu(4 * 9) ~ 37, so the block output is
    // ~1 + 37 = 38. A stale scale1 would give ~1 + (1 + gelu(4)) ~ 6.
    const double s2 = out[2].data()[0];
    REQUIRE(s2 > 20.0);
}

TEST_CASE("FMM sums per-scale predictions and honors the ensemble rule", "[model][fmm]") {
    ModelConfig cfg = tiny_config();
    cfg.num_scales = 2;
    cfg.input_len = 16;
    auto model = TimeMixerModel::init(cfg, 11);
    Rng rng(6);
    auto x = testutil::random_tensor({3, 16, 2}, rng);

    auto preds = model.per_scale_predictions(x);
    REQUIRE(preds.size() == 3);  // M+1
    auto y = model.forward(x);
    Tensor acc = preds[0];
    for (std::size_t m = 1; m < preds.size(); ++m) acc = add(acc, preds[m]);
    REQUIRE(y.data() == acc.data());  // exact ensemble linearity

    SECTION("average equals sum divided by M+1, exactly") {
        ModelConfig avg_cfg = cfg;
        avg_cfg.ensemble = EnsembleRule::average;
        auto avg_model = TimeMixerModel::init(avg_cfg, 11);  // same seed -> same weights
        auto y_avg = avg_model.forward(x);
        auto expected = div_scalar(y, 3.0);
        REQUIRE(y_avg.data() == expected.data());
    }

    SECTION("M=0 output equals the single predictor output exactly") {
        ModelConfig m0 = tiny_config();
        m0.num_scales = 0;
        auto model0 = TimeMixerModel::init(m0, 2);
        Rng r2(8);
        auto x0 = testutil::random_tensor({2, m0.input_len, m0.channels}, r2);
        auto p = model0.per_scale_predictions(x0);
        REQUIRE(p.size() == 1);
        REQUIRE(model0.forward(x0).data() == p[0].data());
    }

    SECTION("use_fmm=false uses only the finest-scale predictor") {
        ModelConfig nf = cfg;
        nf.ablation.use_fmm = false;
        auto nf_model = TimeMixerModel::init(nf, 11);
        auto p = nf_model.per_scale_predictions(x);
        REQUIRE(p.size() == 1);
        REQUIRE(nf_model.forward(x).data() == p[0].data());
    }
}

TEST_CASE("all ten ablation cases construct and run forward", "[model][ablation][property]") {
    Rng rng(123);
    auto x = testutil::random_tensor({2, 16, 2}, rng);
    for (int id = 1; id <= 10; ++id) {
        ModelConfig cfg = tiny_config();
        cfg.input_len = 16;
        cfg.num_scales = 2;
        cfg.ablation = AblationConfig::table_case(id);
        auto model = TimeMixerModel::init(cfg, 99);
        auto y = model.forward(x);
        REQUIRE(y.shape() == Shape{2, cfg.pred_len, cfg.channels});
        REQUIRE(y.all_finite());
    }
    REQUIRE_THROWS_AS(AblationConfig::table_case(11), std::invalid_argument);
    REQUIRE(AblationConfig::table_case(1) == AblationConfig{});
}

TEST_CASE("case 2 differs from case 1 only in use_fmm", "[model][ablation]") {
    auto c1 = AblationConfig::table_case(1);
    auto c2 = AblationConfig::table_case(2);
    c2.use_fmm = true;
    REQUIRE(c1 == c2);
}

TEST_CASE("initialization is seed-determined and within the fan-in bound", "[model][init]") {
    ModelConfig cfg = tiny_config();
    auto a = TimeMixerModel::init(cfg, 7);
    auto b = TimeMixerModel::init(cfg, 7);
    auto c = TimeMixerModel::init(cfg, 8);
    const auto &pa = a.named_parameters(), &pb = b.named_parameters(),
               &pc = c.named_parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].second.data() == pb[i].second.data());
        if (pa[i].second.data() != pc[i].second.data()) any_diff = true;
    }
    REQUIRE(any_diff);

    for (const auto& [name, t] : pa) {
        if (name.find("bias") != std::string::npos || name.find(".b") != std::string::npos) {
            for (double v : t.data()) REQUIRE(v == 0.0);
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
            for (double v : t.data()) {
                REQUIRE(v >= -bound);
                REQUIRE(v < bound);
            }
        }
    }
}

TEST_CASE("every parameter receives gradient in the canonical configuration",
          "[model][grad][property]") {
    ModelConfig cfg = tiny_config();
    cfg.num_scales = 2;
    cfg.input_len = 16;
    auto model = TimeMixerModel::init(cfg, 21);
    Rng rng(13);
    auto x = testutil::random_tensor({4, 16, 2}, rng);
    auto target = testutil::random_tensor({4, cfg.pred_len, 2}, rng);
    Tape tape;
    {
        Tape::Scope scope(tape);
        auto d = sub(model.forward(x), target);
        tape.backward(mean(mul(d, d)));
    }
    for (const auto& [name, t] : model.named_parameters()) {
        INFO("parameter " << name);
        REQUIRE(t.has_grad());
        double norm = 0.0;
        for (double g : t.grad()) norm += g * g;
        REQUIRE(norm > 0.0);
    }
}

TEST_CASE("model gradients match finite differences on the tiny config",
          "[model][grad][oracle]") {
    ModelConfig cfg = tiny_config();  // P=8, F=4, C=2, M=1, L=1, d_model=4
    auto model = TimeMixerModel::init(cfg, 33);
    Rng rng(17);
    auto x = testutil::random_tensor({2, 8, 2}, rng);
    auto target = testutil::random_tensor({2, 4, 2}, rng);
    auto params = model.parameters();
    auto forward = [&] {
        auto d = sub(model.forward(x), target);
        return mean(mul(d, d));
    };
    REQUIRE(testutil::finite_diff_max_rel_err(params, forward) < 1e-4);
}

TEST_CASE("two forwards with identical inputs are bit-identical", "[model][determinism]") {
    ModelConfig cfg = tiny_config();
    auto model = TimeMixerModel::init(cfg, 4);
    Rng rng(5);
    auto x = testutil::random_tensor({2, 8, 2}, rng);
    REQUIRE(model.forward(x).data() == model.forward(x).data());
}

TEST_CASE("checkpoint round-trips bytes and predictions", "[model][checkpoint]") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "timemixer_ckpt_test";
    fs::create_directories(dir);
    const auto p1 = (dir / "a.ckpt").string();
    const auto p2 = (dir / "b.ckpt").string();

    ModelConfig cfg = tiny_config();
    cfg.num_scales = 2;
    cfg.input_len = 16;
    cfg.decomposition.kernel = 5;
    auto model = TimeMixerModel::init(cfg, 2025);
    ScalerStats scaler{{0.5, -1.0}, {2.0, 3.0}};
    save_checkpoint(p1, model, scaler);

    auto loaded = load_checkpoint(p1);
    REQUIRE(loaded.model.config() == cfg);
    REQUIRE(loaded.scaler.mean == scaler.mean);
    REQUIRE(loaded.scaler.std == scaler.std);
    save_checkpoint(p2, loaded.model, loaded.scaler);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(c1 == c2);

    Rng rng(77);
    auto x = testutil::random_tensor({2, 16, 2}, rng);
    REQUIRE(model.forward(x).data() == loaded.model.forward(x).data());

    fs::remove_all(dir);
}

TEST_CASE("loading a non-checkpoint file fails cleanly", "[model][checkpoint]") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "not_a_ckpt.txt").string();
    std::ofstream(path) << "hello\n";
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
    fs::remove(path);
}
