#pragma once

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "fedsieve/common.hpp"

namespace fedsieve {

struct PaillierPublicKey {
    mpz_class n;   // modulus N = p*q
    mpz_class n2;  // N^2
    mpz_class g;   // N + 1
    std::size_t bits = 0;
};

struct PaillierKeypair {
    PaillierPublicKey pk;
    mpz_class lambda;  // lcm(p-1, q-1)
    mpz_class mu;      // lambda^{-1} mod N
};

struct Ciphertext {
    mpz_class value;  // in Z_{N^2}, always a unit
};

class PaillierRng {
public:
    explicit PaillierRng(std::uint64_t seed) : state_(gmp_randinit_mt) {
        state_.seed(static_cast<unsigned long>(seed));
    }

    mpz_class bits(std::size_t nbits) { return state_.get_z_bits(static_cast<unsigned long>(nbits)); }

    // Uniform in [0, bound).
    mpz_class below(const mpz_class& bound) { return state_.get_z_range(bound); }

private:
    gmp_randclass state_;
};

// Deterministic keypair per seed. Primes are nextprime() of seeded random
// odd candidates with the top bit forced, so N lands near 2^bits.
inline PaillierKeypair paillier_keygen(std::size_t bits, std::uint64_t seed) {
    if (bits != 512 && bits != 1024 && bits != 2048)
        throw ConfigError("paillier: key size must be 512, 1024 or 2048 bits");

    PaillierRng rng(mix_seed(seed, 0x7061696c));  // "pail"
    std::size_t half = bits / 2;

    auto gen_prime = [&](void) {
        mpz_class candidate = rng.bits(half);
        mpz_setbit(candidate.get_mpz_t(), static_cast<mp_bitcnt_t>(half - 1));
        mpz_setbit(candidate.get_mpz_t(), 0);
        mpz_class prime;
        mpz_nextprime(prime.get_mpz_t(), candidate.get_mpz_t());
        return prime;
    };

    for (int attempt = 0; attempt < 64; ++attempt) {
        mpz_class p = gen_prime();
        mpz_class q = gen_prime();
        if (p == q) continue;
        mpz_class n = p * q;
        mpz_class phi = (p - 1) * (q - 1);
        mpz_class check;
        mpz_gcd(check.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
        if (check != 1) continue;

        PaillierKeypair kp;
        kp.pk.n = n;
        kp.pk.n2 = n * n;
        kp.pk.g = n + 1;
        kp.pk.bits = bits;
        mpz_lcm(kp.lambda.get_mpz_t(), mpz_class(p - 1).get_mpz_t(),
                mpz_class(q - 1).get_mpz_t());
        if (mpz_invert(kp.mu.get_mpz_t(), kp.lambda.get_mpz_t(), n.get_mpz_t()) == 0) continue;
        return kp;
    }
    throw Error("paillier: prime search exhausted");
}

// g = N+1 encryption: c = (1 + m*N) * rho^N mod N^2 with rho a random unit.
inline Ciphertext paillier_enc(const PaillierPublicKey& pk, const mpz_class& m, PaillierRng& rng) {
    mpz_class reduced = m % pk.n;
    if (reduced < 0) reduced += pk.n;

    mpz_class rho, gcd;
    do {
        rho = rng.below(pk.n - 1) + 1;
        mpz_gcd(gcd.get_mpz_t(), rho.get_mpz_t(), pk.n.get_mpz_t());
    } while (gcd != 1);

    mpz_class c;
    mpz_powm(c.get_mpz_t(), rho.get_mpz_t(), pk.n.get_mpz_t(), pk.n2.get_mpz_t());
    c = (c * (1 + reduced * pk.n)) % pk.n2;
    return {c};
}

inline mpz_class paillier_dec(const PaillierKeypair& kp, const Ciphertext& c) {
    mpz_class u;
    mpz_powm(u.get_mpz_t(), c.value.get_mpz_t(), kp.lambda.get_mpz_t(), kp.pk.n2.get_mpz_t());
    mpz_class l = (u - 1) / kp.pk.n;
    return (l * kp.mu) % kp.pk.n;
}

// Ciphertext product decrypts to the plaintext sum.
inline Ciphertext paillier_add(const PaillierPublicKey& pk, const Ciphertext& a,
                               const Ciphertext& b) {
    return {(a.value * b.value) % pk.n2};
}

// Ciphertext power decrypts to the scaled plaintext.
inline Ciphertext paillier_scale(const PaillierPublicKey& pk, const Ciphertext& c,
                                 const mpz_class& factor) {
    mpz_class out;
    mpz_powm(out.get_mpz_t(), c.value.get_mpz_t(), factor.get_mpz_t(), pk.n2.get_mpz_t());
    return {out};
}

// Signed fixed-point reals in Z_N: scale 2^40, sign threshold N/2, and a
// |value| < N/4 headroom bound so one additive mask never wraps ambiguously.
class FixedPointCodec {
public:
    static constexpr int kScaleBits = 40;

    explicit FixedPointCodec(mpz_class modulus) : n_(std::move(modulus)) {
        half_ = n_ / 2;
        quarter_ = n_ / 4;
    }

    mpz_class encode(double x) const {
        if (!std::isfinite(x)) throw CodecOverflowError("fixed-point: non-finite input");
        double scaled = std::round(std::ldexp(x, kScaleBits));
        mpz_class v;
        mpz_set_d(v.get_mpz_t(), scaled);
        mpz_class mag = abs(v);
        if (mag >= quarter_) throw CodecOverflowError("fixed-point: value beyond codec headroom");
        if (v < 0) v += n_;
        return v;
    }

    // Accepts encodings plus one additive mask 2^32 wide; anything further
    // out indicates a protocol error upstream.
    double decode(const mpz_class& raw) const {
        mpz_class v = raw % n_;
        if (v < 0) v += n_;
        if (v > half_) v -= n_;
        mpz_class slack = quarter_ + (mpz_class(1) << 33);
        if (abs(v) >= slack) throw CodecOverflowError("fixed-point: decoded value beyond headroom");
        return std::ldexp(mpz_get_d(v.get_mpz_t()), -kScaleBits);
    }

    const mpz_class& modulus() const { return n_; }

private:
    mpz_class n_;
    mpz_class half_;
    mpz_class quarter_;
};

}  // namespace fedsieve
