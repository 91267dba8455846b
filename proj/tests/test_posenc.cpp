#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "physiolite/posenc.hpp"
#include "physiolite/rng.hpp"

using namespace physiolite;

TEST_CASE("pe_value fixed points") {
    SUBCASE("t=0 gives (0, 1) for any k") {
        for (int k = 0; k < 12; ++k) {
            auto [s, c] = pe_value(0, k, 1024);
            CHECK(s == 0.0);
            CHECK(c == 1.0);
        }
    }
    SUBCASE("quarter period at k=0") {
        auto [s, c] = pe_value(256, 0, 1024);
        CHECK(s == doctest::Approx(1.0));
        CHECK(c == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("t=T/2 at k=1 is one full period") {
        auto [s, c] = pe_value(512, 1, 1024);
        CHECK(s == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(c == doctest::Approx(1.0));
    }
    SUBCASE("out-of-range arguments rejected") {
        CHECK_THROWS_AS(pe_value(-1, 0, 16), DataError);
        CHECK_THROWS_AS(pe_value(16, 0, 16), DataError);
    }
}

TEST_CASE("build_pe_tables sizes") {
    SUBCASE("T=1024, F=8: halving periods, 2x2040 bytes total") {
        PosEncodingTable t = build_pe_tables(1024, 8, 0.1);
        REQUIRE(t.luts.size() == 8);
        int64_t expected_sum = 0;
        for (int k = 0; k < 8; ++k) {
            CHECK(t.luts[static_cast<size_t>(k)].period == 1024 >> k);
            CHECK_FALSE(t.luts[static_cast<size_t>(k)].fallback);
            expected_sum += 1024 >> k;
        }
        CHECK(expected_sum == 2040);
        CHECK(t.total_bytes() == 2 * 2040);
    }
    SUBCASE("alpha bounds the dequantized codes") {
        PosEncodingTable t = build_pe_tables(512, 8, 0.1);
        for (const auto& lut : t.luts)
            for (size_t i = 0; i < lut.sin_codes.size(); ++i) {
                CHECK(std::abs(lut.sin_codes[i] / 128.0) <= 0.1 + 1.0 / 256.0);
                CHECK(std::abs(lut.cos_codes[i] / 128.0) <= 0.1 + 1.0 / 256.0);
            }
    }
    SUBCASE("F=12 with T=1024: k=10 has period 1, k=11 falls back") {
        PosEncodingTable t = build_pe_tables(1024, 12, 0.1);
        CHECK(t.luts[10].period == 1);
        CHECK_FALSE(t.luts[10].fallback);
        CHECK(t.luts[11].period == 1024);
        CHECK(t.luts[11].fallback);
    }
}

TEST_CASE("LUT path equals direct evaluation followed by Q7 quantization") {
    for (int64_t T : {512, 1024}) {
        for (int F : {8, 12}) {
            PosEncodingTable table = build_pe_tables(T, F, 0.1);
            Q7Tensor zero_window;
            zero_window.shape = {2, T};
            zero_window.data.assign(static_cast<size_t>(2 * T), 0);
            AugmentedWindow aug = encode_positions(table, zero_window, 100.0);
            REQUIRE(aug.total_channels() == 2 + 2 * F);
            for (int k = 0; k < F; ++k) {
                for (int64_t t = 0; t < T; ++t) {
                    const auto [s, c] = pe_value(t, k, T);
                    const int8_t want_s = quantize_q7_value(0.1 * s);
                    const int8_t want_c = quantize_q7_value(0.1 * c);
                    const int8_t got_s =
                        aug.qdata.data[static_cast<size_t>(2 + 2 * k) * T + static_cast<size_t>(t)];
                    const int8_t got_c =
                        aug.qdata.data[static_cast<size_t>(2 + 2 * k + 1) * T + static_cast<size_t>(t)];
                    REQUIRE(got_s == want_s);
                    REQUIRE(got_c == want_c);
                }
            }
        }
    }
}

TEST_CASE("encode_positions contracts") {
    PosEncodingTable table = build_pe_tables(256, 4, 0.1);
    SUBCASE("zero signal stays zero, positional channels alive") {
        Q7Tensor zeros;
        zeros.shape = {3, 256};
        zeros.data.assign(3 * 256, 0);
        AugmentedWindow aug = encode_positions(table, zeros, 100.0);
        for (size_t i = 0; i < 3 * 256; ++i) CHECK(aug.qdata.data[i] == 0);
        bool any_nonzero = false;
        for (size_t i = 3 * 256; i < aug.qdata.data.size(); ++i)
            if (aug.qdata.data[i] != 0) any_nonzero = true;
        CHECK(any_nonzero);
    }
    SUBCASE("positional channels are input independent") {
        Rng rng(3);
        Q7Tensor a, b;
        a.shape = b.shape = {2, 256};
        a.data.resize(512);
        b.data.resize(512);
        for (size_t i = 0; i < 512; ++i) {
            a.data[i] = static_cast<int8_t>(rng.uniform_int(-128, 127));
            b.data[i] = static_cast<int8_t>(rng.uniform_int(-128, 127));
        }
        AugmentedWindow aa = encode_positions(table, a, 100.0);
        AugmentedWindow bb = encode_positions(table, b, 100.0);
        for (size_t i = 2 * 256; i < aa.qdata.data.size(); ++i)
            CHECK(aa.qdata.data[i] == bb.qdata.data[i]);
    }
    SUBCASE("one table serves many windows") {
        Q7Tensor w;
        w.shape = {1, 256};
        w.data.assign(256, 5);
        AugmentedWindow first = encode_positions(table, w, 100.0);
        AugmentedWindow second = encode_positions(table, w, 100.0);
        CHECK(first.qdata.data == second.qdata.data);
    }
    SUBCASE("length mismatch is an error") {
        Q7Tensor w;
        w.shape = {1, 128};
        w.data.assign(128, 0);
        CHECK_THROWS_AS(encode_positions(table, w, 100.0), DataError);
    }
    SUBCASE("float reference path carries alpha-scaled values") {
        SignalWindow w;
        w.channels = 1;
        w.window_len = 256;
        w.sample_rate_hz = 100.0;
        w.data.assign(256, 0.25);
        AugmentedWindow aug = encode_positions(table, w);
        CHECK(aug.domain == Domain::real_valued);
        CHECK(aug.fdata[0] == 0.25);
        // PE_k(0) = (0, alpha) after scaling, pre-quantization
        CHECK(aug.fdata[1 * 256 + 0] == 0.0);
        CHECK(aug.fdata[2 * 256 + 0] == doctest::Approx(0.1));
    }
}

TEST_CASE("table dump format") {
    PosEncodingTable table = build_pe_tables(16, 2, 0.1);
    std::ostringstream os;
    dump_pe_table(table, os);
    std::istringstream is(os.str());
    int k = -1, t = -1, s = -1, c = -1;
    const bool parsed = static_cast<bool>(is >> k >> t >> s >> c);
    REQUIRE(parsed);
    CHECK(k == 0);
    CHECK(t == 0);
    CHECK(s == 0);
    CHECK(c == 13);  // round(0.1 * 128)
}
