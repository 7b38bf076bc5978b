#include "csense/gradcheck_battery.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>

#include "csense/gradcheck.hpp"
#include "csense/rng.hpp"
#include "csense/swin.hpp"
#include "csense/unet.hpp"

namespace csense::nn {

namespace {

constexpr double kBound = 1e-4;

DTensor random_tensor(std::vector<int64_t> shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    DTensor t(std::move(shape));
    SplitMix64 rng(seed);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// keeps values away from relu / max-pool kinks so central differences stay valid
DTensor random_kink_safe(std::vector<int64_t> shape, uint64_t seed) {
    DTensor t = random_tensor(std::move(shape), seed);
    for (size_t i = 0; i < t.data.size(); ++i) {
        if (std::abs(t.data[i]) < 0.05) t.data[i] = t.data[i] < 0 ? -0.1 : 0.1;
        t.data[i] += 1e-4 * static_cast<double>(i);  // break max-pool ties
    }
    return t;
}

struct Battery {
    std::vector<OpCheck> results;

    // fn builds a scalar loss from the checked tensor
    void check(const std::string& name,
               const std::function<Var<double>(const Var<double>&)>& fn, const DTensor& x) {
        const double err = grad_check(fn, x);
        auto it = std::find_if(results.begin(), results.end(),
                               [&](const OpCheck& c) { return c.name == name; });
        if (it == results.end()) {
            results.push_back({name, err, err < kBound});
        } else {
            it->max_rel_error = std::max(it->max_rel_error, err);
            it->pass = it->pass && err < kBound;
        }
    }
};

}  // namespace

std::vector<OpCheck> run_gradcheck_battery() {
    Battery b;
    const uint64_t seeds[3] = {11, 23, 47};

    for (int si = 0; si < 3; ++si) {
        const uint64_t s = seeds[si];

        // conv1d: w.r.t. input and weight, two geometries
        {
            auto w1 = make_leaf<double>(random_tensor({4, 3, 3}, s + 100), true);
            auto bias1 = make_leaf<double>(random_tensor({4}, s + 101), true);
            const DTensor ws = random_tensor({2, 4, 6}, s + 102);
            b.check("conv1d",
                    [&](const Var<double>& x) {
                        return weighted_sum(conv1d(x, w1, bias1, 1, 1), ws);
                    },
                    random_tensor({2, 3, 6}, s + 103));
            const DTensor x2 = random_tensor({1, 2, 7}, s + 104);
            auto x2v = make_leaf<double>(x2, false);
            auto bias2 = make_leaf<double>(random_tensor({3}, s + 105), true);
            const DTensor ws2 = random_tensor({1, 3, 3}, s + 106);
            b.check("conv1d",
                    [&](const Var<double>& w) {
                        return weighted_sum(conv1d(x2v, w, bias2, 2, 0), ws2);
                    },
                    random_tensor({3, 2, 3}, s + 107));
        }

        // conv1d_transposed: w.r.t. input and weight
        {
            auto w1 = make_leaf<double>(random_tensor({3, 2, 2}, s + 110), true);
            auto bias1 = make_leaf<double>(random_tensor({2}, s + 111), true);
            const DTensor ws = random_tensor({2, 2, 8}, s + 112);
            b.check("conv1d_transposed",
                    [&](const Var<double>& x) {
                        return weighted_sum(conv1d_transposed(x, w1, bias1, 2), ws);
                    },
                    random_tensor({2, 3, 4}, s + 113));
            auto x2 = make_leaf<double>(random_tensor({1, 2, 5}, s + 114), false);
            auto bias2 = make_leaf<double>(random_tensor({3}, s + 115), true);
            const DTensor ws2 = random_tensor({1, 3, 7}, s + 116);
            b.check("conv1d_transposed",
                    [&](const Var<double>& w) {
                        return weighted_sum(conv1d_transposed(x2, w, bias2, 1), ws2);
                    },
                    random_tensor({2, 3, 3}, s + 117));
        }

        // batch_norm1d in both modes, w.r.t. input and affine params
        {
            auto gamma = make_leaf<double>(random_tensor({3}, s + 120, 0.5, 1.5), true);
            auto beta = make_leaf<double>(random_tensor({3}, s + 121), true);
            const DTensor ws = random_tensor({2, 3, 4}, s + 122);
            b.check("batch_norm1d",
                    [&](const Var<double>& x) {
                        return weighted_sum(
                            batch_norm1d(x, gamma, beta, static_cast<DTensor*>(nullptr),
                                         static_cast<DTensor*>(nullptr), Mode::Train),
                            ws);
                    },
                    random_tensor({2, 3, 4}, s + 123));
            DTensor rm = random_tensor({2}, s + 124);
            DTensor rv = random_tensor({2}, s + 125, 0.5, 1.5);
            auto g2 = make_leaf<double>(random_tensor({2}, s + 126, 0.5, 1.5), true);
            auto x2 = make_leaf<double>(random_tensor({3, 2, 2}, s + 127), false);
            const DTensor ws2 = random_tensor({3, 2, 2}, s + 128);
            b.check("batch_norm1d",
                    [&](const Var<double>& bet) {
                        return weighted_sum(batch_norm1d(x2, g2, bet, &rm, &rv, Mode::Eval), ws2);
                    },
                    random_tensor({2}, s + 129));
        }

        // attention with and without mask
        {
            auto k = make_leaf<double>(random_tensor({1, 2, 4, 3}, s + 130), true);
            auto v = make_leaf<double>(random_tensor({1, 2, 4, 3}, s + 131), true);
            const DTensor ws = random_tensor({1, 2, 4, 3}, s + 132);
            b.check("attention",
                    [&](const Var<double>& q) { return weighted_sum(attention(q, k, v), ws); },
                    random_tensor({1, 2, 4, 3}, s + 133));
            DTensor mask({4, 4});
            mask(0, 3) = -1e9;
            mask(3, 0) = -1e9;
            b.check("attention",
                    [&](const Var<double>& q) {
                        return weighted_sum(attention(q, k, v, &mask), ws);
                    },
                    random_tensor({1, 2, 4, 3}, s + 134));
        }

        // losses
        {
            const DTensor target = random_tensor({2, 3, 4}, s + 140);
            b.check("mse_loss", [&](const Var<double>& x) { return mse_loss(x, target); },
                    random_tensor({2, 3, 4}, s + 141));
            DTensor mask({2, 3, 4});
            SplitMix64 mrng(s + 142);
            bool any = false;
            for (auto& m : mask.data) {
                m = mrng.next_double() < 0.5 ? 1.0 : 0.0;
                any = any || m > 0;
            }
            if (!any) mask.data[0] = 1.0;
            b.check("mse_loss", [&](const Var<double>& x) { return mse_loss(x, target, &mask); },
                    random_tensor({2, 3, 4}, s + 143));

            const std::vector<int> y1{3, 0, 7, 10};
            b.check("cross_entropy", [&](const Var<double>& x) { return cross_entropy(x, y1); },
                    random_tensor({4, 11}, s + 144));
            const std::vector<int> y2{1, 4, 2};
            b.check("cross_entropy", [&](const Var<double>& x) { return cross_entropy(x, y2); },
                    random_tensor({3, 5}, s + 145));
        }

        // elementwise activations
        {
            const DTensor ws = random_tensor({2, 3, 5}, s + 150);
            b.check("relu", [&](const Var<double>& x) { return weighted_sum(relu(x), ws); },
                    random_kink_safe({2, 3, 5}, s + 151));
            const DTensor ws2 = random_tensor({7}, s + 152);
            b.check("relu", [&](const Var<double>& x) { return weighted_sum(relu(x), ws2); },
                    random_kink_safe({7}, s + 153));
            b.check("gelu", [&](const Var<double>& x) { return weighted_sum(gelu(x), ws); },
                    random_tensor({2, 3, 5}, s + 154));
            b.check("gelu", [&](const Var<double>& x) { return weighted_sum(gelu(x), ws2); },
                    random_tensor({7}, s + 155));
        }

        // max pool
        {
            const DTensor ws = random_tensor({2, 2, 3}, s + 160);
            b.check("max_pool1d",
                    [&](const Var<double>& x) { return weighted_sum(max_pool1d(x, 2, 2), ws); },
                    random_kink_safe({2, 2, 6}, s + 161));
            const DTensor ws2 = random_tensor({1, 3, 2}, s + 162);
            b.check("max_pool1d",
                    [&](const Var<double>& x) { return weighted_sum(max_pool1d(x, 2, 2), ws2); },
                    random_kink_safe({1, 3, 4}, s + 163));
        }

        // linear w.r.t. x, w, b
        {
            auto w = make_leaf<double>(random_tensor({4, 3}, s + 170), true);
            auto bias = make_leaf<double>(random_tensor({3}, s + 171), true);
            const DTensor ws = random_tensor({2, 3}, s + 172);
            b.check("linear",
                    [&](const Var<double>& x) { return weighted_sum(linear(x, w, bias), ws); },
                    random_tensor({2, 4}, s + 173));
            auto x2 = make_leaf<double>(random_tensor({3, 2}, s + 174), false);
            const DTensor ws2 = random_tensor({3, 5}, s + 175);
            auto b2 = make_leaf<double>(random_tensor({5}, s + 176), true);
            b.check("linear",
                    [&](const Var<double>& w2) { return weighted_sum(linear(x2, w2, b2), ws2); },
                    random_tensor({2, 5}, s + 177));
        }

        // layer_norm w.r.t. x and gamma
        {
            auto gamma = make_leaf<double>(random_tensor({5}, s + 180, 0.5, 1.5), true);
            auto beta = make_leaf<double>(random_tensor({5}, s + 181), true);
            const DTensor ws = random_tensor({3, 5}, s + 182);
            b.check("layer_norm",
                    [&](const Var<double>& x) {
                        return weighted_sum(layer_norm(x, gamma, beta), ws);
                    },
                    random_tensor({3, 5}, s + 183));
            auto x2 = make_leaf<double>(random_tensor({2, 4}, s + 184), false);
            auto beta2 = make_leaf<double>(random_tensor({4}, s + 185), true);
            const DTensor ws2 = random_tensor({2, 4}, s + 186);
            b.check("layer_norm",
                    [&](const Var<double>& g) { return weighted_sum(layer_norm(x2, g, beta2), ws2); },
                    random_tensor({4}, s + 187, 0.5, 1.5));
        }

        // softmax
        {
            const DTensor ws = random_tensor({3, 4}, s + 190);
            b.check("softmax",
                    [&](const Var<double>& x) { return weighted_sum(softmax_lastdim(x), ws); },
                    random_tensor({3, 4}, s + 191));
            const DTensor ws2 = random_tensor({2, 2, 5}, s + 192);
            b.check("softmax",
                    [&](const Var<double>& x) { return weighted_sum(softmax_lastdim(x), ws2); },
                    random_tensor({2, 2, 5}, s + 193));
        }

        // matmul family
        {
            auto other = make_leaf<double>(random_tensor({2, 3, 4}, s + 200), true);
            const DTensor ws = random_tensor({2, 2, 4}, s + 201);
            b.check("bmm",
                    [&](const Var<double>& a) { return weighted_sum(bmm(a, other), ws); },
                    random_tensor({2, 2, 3}, s + 202));
            auto a2 = make_leaf<double>(random_tensor({1, 2, 2, 3}, s + 203), false);
            const DTensor ws2 = random_tensor({1, 2, 2, 2}, s + 204);
            b.check("bmm",
                    [&](const Var<double>& bb) { return weighted_sum(bmm(a2, bb), ws2); },
                    random_tensor({1, 2, 3, 2}, s + 205));
            const DTensor wst = random_tensor({3, 2}, s + 206);
            b.check("transpose_last2",
                    [&](const Var<double>& a) { return weighted_sum(transpose_last2(a), wst); },
                    random_tensor({2, 3}, s + 207));
            const DTensor wst2 = random_tensor({2, 4, 3}, s + 208);
            b.check("transpose_last2",
                    [&](const Var<double>& a) { return weighted_sum(transpose_last2(a), wst2); },
                    random_tensor({2, 3, 4}, s + 209));
        }

        // layout ops
        {
            const DTensor ws = random_tensor({6, 2}, s + 210);
            b.check("reshape",
                    [&](const Var<double>& a) { return weighted_sum(reshape(a, {6, 2}), ws); },
                    random_tensor({3, 4}, s + 211));
            const DTensor ws1 = random_tensor({12}, s + 212);
            b.check("reshape",
                    [&](const Var<double>& a) { return weighted_sum(reshape(a, {12}), ws1); },
                    random_tensor({2, 6}, s + 213));
            const DTensor wsp = random_tensor({4, 2, 3}, s + 214);
            b.check("permute",
                    [&](const Var<double>& a) { return weighted_sum(permute(a, {2, 0, 1}), wsp); },
                    random_tensor({2, 3, 4}, s + 215));
            const DTensor wsp2 = random_tensor({3, 2}, s + 216);
            b.check("permute",
                    [&](const Var<double>& a) { return weighted_sum(permute(a, {1, 0}), wsp2); },
                    random_tensor({2, 3}, s + 217));
            const DTensor wsr = random_tensor({5, 3}, s + 218);
            b.check("roll_axis0",
                    [&](const Var<double>& a) { return weighted_sum(roll_axis0(a, 2), wsr); },
                    random_tensor({5, 3}, s + 219));
            b.check("roll_axis0",
                    [&](const Var<double>& a) { return weighted_sum(roll_axis0(a, -1), wsr); },
                    random_tensor({5, 3}, s + 220));
        }

        // concat / stack / pool / arithmetic
        {
            auto other = make_leaf<double>(random_tensor({2, 2, 4}, s + 230), true);
            const DTensor ws = random_tensor({2, 5, 4}, s + 231);
            b.check("concat_channels",
                    [&](const Var<double>& a) {
                        return weighted_sum(concat_channels(a, other), ws);
                    },
                    random_tensor({2, 3, 4}, s + 232));
            const DTensor ws2 = random_tensor({1, 4, 2}, s + 233);
            auto first = make_leaf<double>(random_tensor({1, 1, 2}, s + 234), false);
            b.check("concat_channels",
                    [&](const Var<double>& a) {
                        return weighted_sum(concat_channels(first, a), ws2);
                    },
                    random_tensor({1, 3, 2}, s + 235));

            auto row2 = make_leaf<double>(random_tensor({4}, s + 236), true);
            const DTensor wss = random_tensor({2, 4}, s + 237);
            b.check("stack_rows",
                    [&](const Var<double>& a) {
                        return weighted_sum(stack_rows<double>({a, row2}), wss);
                    },
                    random_tensor({4}, s + 238));
            const DTensor wss2 = random_tensor({3, 2}, s + 239);
            auto r2 = make_leaf<double>(random_tensor({2}, s + 240), true);
            auto r3 = make_leaf<double>(random_tensor({2}, s + 241), true);
            b.check("stack_rows",
                    [&](const Var<double>& a) {
                        return weighted_sum(stack_rows<double>({a, r2, r3}), wss2);
                    },
                    random_tensor({2}, s + 242));

            const DTensor wsm = random_tensor({4}, s + 243);
            b.check("mean_axis0",
                    [&](const Var<double>& a) { return weighted_sum(mean_axis0(a), wsm); },
                    random_tensor({3, 4}, s + 244));
            const DTensor wsm2 = random_tensor({2}, s + 245);
            b.check("mean_axis0",
                    [&](const Var<double>& a) { return weighted_sum(mean_axis0(a), wsm2); },
                    random_tensor({5, 2}, s + 246));

            auto addend = make_leaf<double>(random_tensor({3, 4}, s + 247), true);
            const DTensor wsa = random_tensor({3, 4}, s + 248);
            b.check("add",
                    [&](const Var<double>& a) { return weighted_sum(add(a, addend), wsa); },
                    random_tensor({3, 4}, s + 249));
            b.check("add",
                    [&](const Var<double>& a) { return weighted_sum(add(addend, a), wsa); },
                    random_tensor({3, 4}, s + 250));
            b.check("scale",
                    [&](const Var<double>& a) { return weighted_sum(scale(a, 2.5), wsa); },
                    random_tensor({3, 4}, s + 251));
            b.check("scale",
                    [&](const Var<double>& a) { return weighted_sum(scale(a, -0.75), wsa); },
                    random_tensor({3, 4}, s + 252));

            auto scores = make_leaf<double>(random_tensor({2, 3, 4, 4}, s + 253), false);
            const DTensor wsb = random_tensor({2, 3, 4, 4}, s + 254);
            b.check("add_head_bias",
                    [&](const Var<double>& bias) {
                        return weighted_sum(add_head_bias(scores, bias), wsb);
                    },
                    random_tensor({3, 4, 4}, s + 255));
            auto bias2 = make_leaf<double>(random_tensor({2, 3, 3}, s + 256), true);
            const DTensor wsb2 = random_tensor({1, 2, 3, 3}, s + 257);
            b.check("add_head_bias",
                    [&](const Var<double>& sc) {
                        return weighted_sum(add_head_bias(sc, bias2), wsb2);
                    },
                    random_tensor({1, 2, 3, 3}, s + 258));
        }

        // named composites from the contract: mse over conv1d, cross-entropy
        // over attention
        {
            auto w = make_leaf<double>(random_tensor({3, 2, 3}, s + 260), true);
            auto bias = make_leaf<double>(random_tensor({3}, s + 261), true);
            const DTensor target = random_tensor({2, 3, 8}, s + 262);
            b.check("mse_loss(conv1d)",
                    [&](const Var<double>& x) {
                        return mse_loss(conv1d(x, w, bias, 1, 1), target);
                    },
                    random_tensor({2, 2, 8}, s + 263));

            auto k = make_leaf<double>(random_tensor({2, 2, 3, 4}, s + 264), true);
            auto v = make_leaf<double>(random_tensor({2, 2, 3, 4}, s + 265), true);
            const std::vector<int> y{1, 3};
            b.check("cross_entropy(attention)",
                    [&](const Var<double>& q) {
                        auto att = attention(q, k, v);  // [2,2,3,4]
                        auto flat = reshape(att, {2, 24});
                        return cross_entropy(flat, y);
                    },
                    random_tensor({2, 2, 3, 4}, s + 266));
        }
    }
    return b.results;
}

bool report_gradcheck_battery(std::ostream& os, const std::vector<OpCheck>& checks) {
    bool all_pass = true;
    for (const auto& c : checks) {
        os << std::left << std::setw(28) << c.name << " max rel err " << std::scientific
           << std::setprecision(3) << c.max_rel_error << (c.pass ? "  ok" : "  FAIL") << "\n";
        all_pass = all_pass && c.pass;
    }
    os.unsetf(std::ios::scientific);
    return all_pass;
}

}  // namespace csense::nn
