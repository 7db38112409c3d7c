#include <doctest.h>

#include "facefill/daf.hpp"
#include "test_helpers.hpp"

using namespace facefill;
using facefill::testing::central_difference;
using facefill::testing::rel_error;

namespace {

DafModule make_daf(ParamStore& store, int channels, uint64_t seed, int reduction = 4,
                   int hidden = 6) {
    Rng rng(seed);
    return DafModule(store, "daf", channels, reduction, hidden, rng);
}

// Straight-line reimplementation of the channel gate: global average pool,
// two 1x1 convs with ReLU/sigmoid, channel rescale.
Tensor channel_attention_oracle(const Tensor& f, const Tensor& w_reduce, const Tensor& w_expand) {
    const int B = f.dim(0), C = f.dim(1), h = f.dim(2), w = f.dim(3);
    const int Cr = w_reduce.dim(0);
    Tensor out = f;
    for (int b = 0; b < B; ++b) {
        std::vector<real> z(static_cast<size_t>(C), 0.0);
        for (int c = 0; c < C; ++c) {
            real acc = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) acc += f.at(b, c, y, x);
            z[static_cast<size_t>(c)] = acc / (h * w);
        }
        std::vector<real> mid(static_cast<size_t>(Cr), 0.0);
        for (int i = 0; i < Cr; ++i) {
            real acc = 0.0;
            for (int c = 0; c < C; ++c) acc += w_reduce.at(i, c) * z[static_cast<size_t>(c)];
            mid[static_cast<size_t>(i)] = acc > 0.0 ? acc : 0.0;
        }
        for (int c = 0; c < C; ++c) {
            real acc = 0.0;
            for (int i = 0; i < Cr; ++i) acc += w_expand.at(c, i) * mid[static_cast<size_t>(i)];
            const real gate = 1.0 / (1.0 + std::exp(-acc));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(b, c, y, x) = gate * f.at(b, c, y, x);
        }
    }
    return out;
}

Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor* bias, int pad) {
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), k = w.dim(2);
    Tensor out(Shape{B, Cout, H, W});
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < Cout; ++o)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    real acc = bias ? (*bias)[o] : 0.0;
                    for (int c = 0; c < Cin; ++c)
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx) {
                                const int sy = y + dy - pad, sx = xx + dx - pad;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                acc += x.at(b, c, sy, sx) * w.at(o, c, dy, dx);
                            }
                    out.at(b, o, y, xx) = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("channel attention: zero expand weights halve the features") {
    ParamStore store;
    DafModule daf = make_daf(store, 8, 1);
    daf.gate_expand.weight.value().fill(0.0);  // gate = sigmoid(0) = 0.5

    Rng rng(2);
    const Tensor f = Tensor::random_uniform(Shape{2, 8, 4, 4}, rng, -1.0, 1.0);
    const Tensor out = daf.channel_attention(constant(f)).value();
    for (std::int64_t i = 0; i < f.size(); ++i)
        CHECK(out[i] == doctest::Approx(0.5 * f[i]).epsilon(1e-12));
}

TEST_CASE("channel attention matches the straight-line oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        ParamStore store;
        DafModule daf = make_daf(store, 8, 10 + static_cast<uint64_t>(trial));
        const Tensor f = Tensor::random_uniform(Shape{2, 8, 3, 5}, rng, -2.0, 2.0);
        const Tensor got = daf.channel_attention(constant(f)).value();
        const Tensor want = channel_attention_oracle(f, daf.gate_reduce.weight.value(),
                                                     daf.gate_expand.weight.value());
        CHECK(max_abs_diff(got, want) < 1e-6);
    }
}

TEST_CASE("pooling stage is homogeneous: z(lambda F) = lambda z(F)") {
    Rng rng(7);
    const Tensor f = Tensor::random_uniform(Shape{2, 4, 5, 5}, rng, -1.0, 1.0);
    const Tensor z1 = global_avg_pool(constant(f)).value();
    Tensor scaled = f;
    for (auto& v : scaled.vec()) v *= 3.7;
    const Tensor z2 = global_avg_pool(constant(scaled)).value();
    for (std::int64_t i = 0; i < z1.size(); ++i)
        CHECK(z2[i] == doctest::Approx(3.7 * z1[i]).epsilon(1e-12));

    // Constant plane pools to the constant exactly.
    Tensor constant_map(Shape{1, 1, 6, 6}, 0.731);
    CHECK(global_avg_pool(constant(constant_map)).value()[0] == doctest::Approx(0.731));
}

TEST_CASE("resize_input: identity projection and area averaging") {
    ParamStore store;
    DafModule daf = make_daf(store, 8, 3);  // input_proj starts at identity

    Rng rng(9);
    const Tensor x = Tensor::random_uniform(Shape{1, 3, 8, 8}, rng);
    CHECK(max_abs_diff(daf.resize_input(constant(x), 8, 8).value(), x) == 0.0);

    const Tensor flat(Shape{1, 3, 8, 8}, 0.42);
    const Tensor down = daf.resize_input(constant(flat), 4, 4).value();
    for (std::int64_t i = 0; i < down.size(); ++i) CHECK(down[i] == doctest::Approx(0.42));

    // Checkerboard averages to one half.
    Tensor board(Shape{1, 3, 8, 8});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x2 = 0; x2 < 8; ++x2) board.at(0, c, y, x2) = (y + x2) % 2;
    const Tensor half = daf.resize_input(constant(board), 4, 4).value();
    for (std::int64_t i = 0; i < half.size(); ++i) CHECK(half[i] == doctest::Approx(0.5));

    CHECK_THROWS_AS(daf.resize_input(constant(x), 16, 16), ShapeError);
}

TEST_CASE("fuse boundary cases select exactly one branch") {
    ParamStore store;
    DafModule daf = make_daf(store, 8, 13);
    Rng rng(14);
    const Tensor f_hat = Tensor::random_uniform(Shape{1, 8, 4, 4}, rng, -1.0, 1.0);
    const Tensor x_resized = Tensor::random_uniform(Shape{1, 3, 4, 4}, rng);

    daf.attn3.weight.value().fill(0.0);
    daf.attn3.bias.value().fill(-1e9);  // alpha -> 0
    auto [copy_known, alpha0] = daf.fuse(constant(f_hat), constant(x_resized));
    CHECK(alpha0.value().max() == 0.0);
    CHECK(max_abs_diff(copy_known.value(), x_resized) == 0.0);

    daf.attn3.bias.value().fill(1e9);  // alpha -> 1
    auto [take_feature, alpha1] = daf.fuse(constant(f_hat), constant(x_resized));
    CHECK(alpha1.value().min() == 1.0);
    const Tensor projected = conv_oracle(f_hat, daf.feature_proj.weight.value(), nullptr, 0);
    CHECK(max_abs_diff(take_feature.value(), projected) < 1e-12);
}

TEST_CASE("fusing equal branches returns them unchanged for any alpha") {
    ParamStore store;
    DafModule daf = make_daf(store, 8, 17);
    Rng rng(18);
    const Tensor f_hat = Tensor::random_uniform(Shape{1, 8, 4, 4}, rng, -1.0, 1.0);
    const Tensor projected = conv_oracle(f_hat, daf.feature_proj.weight.value(), nullptr, 0);
    auto [fused, alpha] = daf.fuse(constant(f_hat), constant(projected));
    CHECK(max_abs_diff(fused.value(), projected) < 1e-12);
}

TEST_CASE("fused output is a pixelwise convex blend") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        ParamStore store;
        DafModule daf = make_daf(store, 8, 30 + static_cast<uint64_t>(trial));
        const Tensor f_hat = Tensor::random_uniform(Shape{2, 8, 5, 5}, rng, -1.0, 1.0);
        const Tensor x_resized = Tensor::random_uniform(Shape{2, 3, 5, 5}, rng);
        auto [fused, alpha] = daf.fuse(constant(f_hat), constant(x_resized));
        const Tensor projected = conv_oracle(f_hat, daf.feature_proj.weight.value(), nullptr, 0);
        CHECK(alpha.value().min() >= 0.0);
        CHECK(alpha.value().max() <= 1.0);
        for (std::int64_t i = 0; i < fused.value().size(); ++i) {
            const real lo = std::min(projected[i], x_resized[i]);
            const real hi = std::max(projected[i], x_resized[i]);
            CHECK(fused.value()[i] >= lo - 1e-12);
            CHECK(fused.value()[i] <= hi + 1e-12);
        }
    }
}

TEST_CASE("full DAF forward matches a from-scratch oracle") {
    Rng rng(25);
    for (int trial = 0; trial < 8; ++trial) {
        ParamStore store;
        DafModule daf = make_daf(store, 8, 50 + static_cast<uint64_t>(trial));
        const Tensor feature = Tensor::random_uniform(Shape{1, 8, 4, 4}, rng, -1.0, 1.0);
        const Tensor x_q = Tensor::random_uniform(Shape{1, 3, 8, 8}, rng);
        auto [fused, alpha_var] = daf.forward(constant(feature), constant(x_q));

        // Oracle: channel gate, resize, projection, attention stack, blend,
        // all with direct loops.
        const Tensor f_hat = channel_attention_oracle(feature, daf.gate_reduce.weight.value(),
                                                      daf.gate_expand.weight.value());
        const Tensor projected_input =
            conv_oracle(x_q, daf.input_proj.weight.value(), nullptr, 0);
        const Tensor x_resized = area_downsample(projected_input, 2);
        const Tensor projected = conv_oracle(f_hat, daf.feature_proj.weight.value(), nullptr, 0);
        Tensor attn_in(Shape{1, 6, 4, 4});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) {
                    attn_in.at(0, c, y, x) = projected.at(0, c, y, x);
                    attn_in.at(0, c + 3, y, x) = x_resized.at(0, c, y, x);
                }
        Tensor h1 = conv_oracle(attn_in, daf.attn1.weight.value(), &daf.attn1.bias.value(), 1);
        for (auto& v : h1.vec()) v = v > 0.0 ? v : 0.0;
        Tensor h2 = conv_oracle(h1, daf.attn2.weight.value(), &daf.attn2.bias.value(), 1);
        for (auto& v : h2.vec()) v = v > 0.0 ? v : 0.0;
        Tensor logits = conv_oracle(h2, daf.attn3.weight.value(), &daf.attn3.bias.value(), 1);
        Tensor expected(Shape{1, 3, 4, 4});
        for (std::int64_t i = 0; i < logits.size(); ++i) {
            const real a = 1.0 / (1.0 + std::exp(-logits[i]));
            expected[i] = a * projected[i] + (1.0 - a) * x_resized[i];
        }
        CHECK(max_abs_diff(fused.value(), expected) < 1e-5);
    }
}

TEST_CASE("fuse gradients match central finite differences") {
    ParamStore store;
    DafModule daf = make_daf(store, 4, 61, 2, 4);
    Rng rng(31);
    Tensor f_hat = Tensor::random_uniform(Shape{1, 4, 3, 3}, rng, -1.0, 1.0);
    Tensor x_resized = Tensor::random_uniform(Shape{1, 3, 3, 3}, rng);
    const Tensor mix = Tensor::random_uniform(Shape{1, 3, 3, 3}, rng, -1.0, 1.0);

    Var fv = Var::leaf(f_hat, true);
    Var xv = Var::leaf(x_resized, true);
    auto [fused, alpha] = daf.fuse(fv, xv);
    Var loss = sum_all(fused * constant(mix));
    store.zero_grad();
    loss.backward();

    auto eval = [&]() {
        NoGradGuard ng;
        auto [f2, a2] = daf.fuse(constant(fv.value()), constant(xv.value()));
        real acc = 0.0;
        for (std::int64_t i = 0; i < f2.value().size(); ++i) acc += f2.value()[i] * mix[i];
        return acc;
    };

    for (std::int64_t i = 0; i < f_hat.size(); i += 3)
        CHECK(rel_error(fv.grad()[i], central_difference(eval, fv.value(), i)) < 1e-3);
    for (std::int64_t i = 0; i < x_resized.size(); i += 3)
        CHECK(rel_error(xv.grad()[i], central_difference(eval, xv.value(), i)) < 1e-3);
    for (size_t p = 0; p < store.size(); ++p) {
        Var& param = store.var(p);
        if (param.grad().empty()) continue;
        for (std::int64_t i = 0; i < param.value().size();
             i += std::max<std::int64_t>(1, param.value().size() / 4))
            CHECK(rel_error(param.grad()[i], central_difference(eval, param.value(), i)) < 1e-3);
    }
}

TEST_CASE("DAF rejects channel counts not divisible by the reduction") {
    ParamStore store;
    Rng rng(1);
    CHECK_THROWS_AS(DafModule(store, "bad", 6, 4, 8, rng), ConfigError);
}
