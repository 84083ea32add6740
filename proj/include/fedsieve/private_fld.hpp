#pragma once

// Privacy-preserving layer scoring: clients upload Paillier-encrypted
// parameters, the aggregation server blinds every coordinate with one shared
// additive mask per coordinate, and the decrypting Cloud Platform (CP) only
// ever sees masked values. Pairwise Euclidean distances are invariant under
// the shared mask, so COF scores computed by the CP match the plaintext
// pipeline exactly in fixed point.
//
// Server and CP are two roles inside one process talking through serialized
// byte messages (wire format below), so a networked deployment is a transport
// swap. Note the protocol sends masked weights, not differences: the CP
// learns w + r with the same r for every client, so pairwise differences are
// visible to it by design.

#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedsieve/common.hpp"
#include "fedsieve/defense.hpp"
#include "fedsieve/model.hpp"
#include "fedsieve/paillier.hpp"

namespace fedsieve {

// One nonzero integer mask per coordinate, shared by all clients in a round.
struct MaskVector {
    std::vector<std::uint64_t> r;
};

inline MaskVector make_mask(std::size_t m, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 0x6d61736b));  // "mask"
    std::uniform_int_distribution<std::uint64_t> dist(0, (std::uint64_t(1) << 32));
    MaskVector mask;
    mask.r.resize(m);
    for (auto& v : mask.r) {
        do {
            v = dist(rng);
        } while (v == 0);  // zero masks are forbidden; redraw
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Wire format. Integers are big-endian. A ciphertext is a u32 byte length
// followed by its magnitude bytes (most significant first); scores are IEEE
// doubles transported as their u64 bit pattern.
// ---------------------------------------------------------------------------

namespace wire {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8)
        out.push_back(static_cast<std::uint8_t>(v >> shift));
}

struct Reader {
    const std::vector<std::uint8_t>* buf;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > buf->size()) throw FormatError("wire: truncated u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | (*buf)[pos++];
        return v;
    }

    std::uint64_t u64() {
        if (pos + 8 > buf->size()) throw FormatError("wire: truncated u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | (*buf)[pos++];
        return v;
    }

    const std::uint8_t* bytes(std::size_t count) {
        if (pos + count > buf->size()) throw FormatError("wire: truncated payload");
        const std::uint8_t* p = buf->data() + pos;
        pos += count;
        return p;
    }
};

inline void put_mpz(std::vector<std::uint8_t>& out, const mpz_class& v) {
    std::size_t count = (mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8;
    if (v == 0) count = 0;
    put_u32(out, static_cast<std::uint32_t>(count));
    if (count == 0) return;
    std::size_t old = out.size();
    out.resize(old + count);
    std::size_t written = 0;
    mpz_export(out.data() + old, &written, 1, 1, 1, 0, v.get_mpz_t());
    if (written != count) throw Error("wire: mpz export length mismatch");
}

inline mpz_class get_mpz(Reader& r) {
    std::uint32_t count = r.u32();
    if (count == 0) return 0;
    const std::uint8_t* p = r.bytes(count);
    mpz_class v;
    mpz_import(v.get_mpz_t(), count, 1, 1, 1, 0, p);
    return v;
}

}  // namespace wire

// n x m ciphertext matrix, row per client.
struct CipherMatrix {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<Ciphertext> cells;  // row-major

    Ciphertext& at(std::size_t i, std::size_t j) { return cells[i * m + j]; }
    const Ciphertext& at(std::size_t i, std::size_t j) const { return cells[i * m + j]; }
};

inline std::vector<std::uint8_t> serialize_cipher_matrix(const CipherMatrix& mat) {
    std::vector<std::uint8_t> out;
    wire::put_u32(out, static_cast<std::uint32_t>(mat.n));
    wire::put_u32(out, static_cast<std::uint32_t>(mat.m));
    for (const auto& c : mat.cells) wire::put_mpz(out, c.value);
    return out;
}

inline CipherMatrix parse_cipher_matrix(const std::vector<std::uint8_t>& buf) {
    wire::Reader r{&buf};
    CipherMatrix mat;
    mat.n = r.u32();
    mat.m = r.u32();
    mat.cells.resize(mat.n * mat.m);
    for (auto& c : mat.cells) c.value = wire::get_mpz(r);
    if (r.pos != buf.size()) throw FormatError("wire: trailing bytes in cipher matrix");
    return mat;
}

inline std::vector<std::uint8_t> serialize_score_matrix(const LayerScoreMatrix& m) {
    std::vector<std::uint8_t> out;
    wire::put_u32(out, static_cast<std::uint32_t>(m.n));
    wire::put_u32(out, static_cast<std::uint32_t>(m.total));
    for (double s : m.scores) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &s, sizeof(bits));
        wire::put_u64(out, bits);
    }
    return out;
}

inline LayerScoreMatrix parse_score_matrix(const std::vector<std::uint8_t>& buf) {
    wire::Reader r{&buf};
    LayerScoreMatrix m;
    m.n = r.u32();
    m.total = r.u32();
    m.scores.resize(m.n * m.total);
    for (auto& s : m.scores) {
        std::uint64_t bits = r.u64();
        std::memcpy(&s, &bits, sizeof(s));
    }
    if (r.pos != buf.size()) throw FormatError("wire: trailing bytes in score matrix");
    return m;
}

// ---------------------------------------------------------------------------
// Protocol operations.
// ---------------------------------------------------------------------------

// Client side: fixed-point encode and encrypt one flattened model.
inline std::vector<Ciphertext> encrypt_model(const PaillierPublicKey& pk,
                                             const FixedPointCodec& codec,
                                             const std::vector<double>& flat, PaillierRng& rng) {
    std::vector<Ciphertext> out;
    out.reserve(flat.size());
    for (double x : flat) out.push_back(paillier_enc(pk, codec.encode(x), rng));
    return out;
}

// Server side: blind column j of every client with the same Enc(r_j).
inline std::pair<CipherMatrix, MaskVector> mask_round(const PaillierPublicKey& pk,
                                                      const CipherMatrix& encrypted,
                                                      std::uint64_t seed) {
    if (encrypted.cells.size() != encrypted.n * encrypted.m)
        throw Error("mask_round: ragged ciphertext matrix");
    MaskVector mask = make_mask(encrypted.m, seed);
    PaillierRng rng(mix_seed(seed, 0x73727672));  // "srvr"

    CipherMatrix out;
    out.n = encrypted.n;
    out.m = encrypted.m;
    out.cells.resize(out.n * out.m);
    for (std::size_t j = 0; j < encrypted.m; ++j) {
        Ciphertext r_enc = paillier_enc(pk, mpz_class(static_cast<unsigned long>(mask.r[j])), rng);
        for (std::size_t i = 0; i < encrypted.n; ++i)
            out.at(i, j) = paillier_add(pk, encrypted.at(i, j), r_enc);
    }
    return {std::move(out), std::move(mask)};
}

// CP side: decrypt the masked coordinates, decode fixed point and run the
// plaintext layer scoring. layer_layout partitions the m coordinates.
inline LayerScoreMatrix private_layer_scoring(const PaillierKeypair& kp, const CipherMatrix& masked,
                                              const std::vector<std::size_t>& layer_layout) {
    std::size_t layout_sum = 0;
    for (std::size_t s : layer_layout) layout_sum += s;
    if (layout_sum != masked.m) throw Error("private_layer_scoring: layout does not cover coordinates");

    FixedPointCodec codec(kp.pk.n);
    std::vector<ClientUpdate> submissions(masked.n);
    for (std::size_t i = 0; i < masked.n; ++i) {
        submissions[i].client_id = i;
        std::size_t cursor = 0;
        for (std::size_t l = 0; l < layer_layout.size(); ++l) {
            Layer layer;
            layer.name = "layer" + std::to_string(l);
            layer.shape = {layer_layout[l]};
            layer.values.resize(layer_layout[l]);
            for (std::size_t t = 0; t < layer_layout[l]; ++t, ++cursor)
                layer.values[t] = codec.decode(paillier_dec(kp, masked.at(i, cursor)));
            submissions[i].params.layers.push_back(std::move(layer));
        }
    }
    return layer_scoring(submissions);
}

// ---------------------------------------------------------------------------
// Message-passing roles.
// ---------------------------------------------------------------------------

class MaskingServer {
public:
    MaskingServer(PaillierPublicKey pk, std::uint64_t seed) : pk_(std::move(pk)), seed_(seed) {}

    // Consumes the clients' encrypted matrix message, emits the masked matrix
    // message for the CP. Mask values never leave the server.
    std::vector<std::uint8_t> mask_and_forward(const std::vector<std::uint8_t>& encrypted_msg,
                                               std::size_t round) {
        CipherMatrix encrypted = parse_cipher_matrix(encrypted_msg);
        auto [masked, mask] = mask_round(pk_, encrypted, mix_seed(seed_, 0x726e64, round));
        last_mask_ = std::move(mask);
        return serialize_cipher_matrix(masked);
    }

    const MaskVector& last_mask() const { return last_mask_; }

private:
    PaillierPublicKey pk_;
    std::uint64_t seed_;
    MaskVector last_mask_;
};

class CloudPlatform {
public:
    CloudPlatform(PaillierKeypair kp, std::vector<std::size_t> layer_layout)
        : kp_(std::move(kp)), layout_(std::move(layer_layout)) {}

    std::vector<std::uint8_t> score(const std::vector<std::uint8_t>& masked_msg) const {
        CipherMatrix masked = parse_cipher_matrix(masked_msg);
        return serialize_score_matrix(private_layer_scoring(kp_, masked, layout_));
    }

private:
    PaillierKeypair kp_;
    std::vector<std::size_t> layout_;
};

// Full private round over plaintext models (clients encrypt, server masks,
// CP scores). Returns the score matrix the parameter server would receive.
inline LayerScoreMatrix private_fld_scores(const PaillierKeypair& kp,
                                           const std::vector<ClientUpdate>& submissions,
                                           std::uint64_t seed, std::size_t round = 0) {
    if (submissions.empty()) throw Error("private_fld_scores: empty input");
    std::vector<std::size_t> layout;
    for (const auto& l : submissions[0].params.layers) layout.push_back(l.size());

    FixedPointCodec codec(kp.pk.n);
    CipherMatrix encrypted;
    encrypted.n = submissions.size();
    encrypted.m = submissions[0].params.flat_size();
    encrypted.cells.reserve(encrypted.n * encrypted.m);
    for (std::size_t i = 0; i < submissions.size(); ++i) {
        PaillierRng rng(mix_seed(seed, 0x636c69, i, round));  // "cli"
        auto row = encrypt_model(kp.pk, codec, submissions[i].params.flatten(), rng);
        for (auto& c : row) encrypted.cells.push_back(std::move(c));
    }

    MaskingServer server(kp.pk, seed);
    CloudPlatform cp(kp, layout);
    auto masked_msg = server.mask_and_forward(serialize_cipher_matrix(encrypted), round);
    return parse_score_matrix(cp.score(masked_msg));
}

// The codec round trip every value takes on the plaintext side of a
// fixed-point comparison.
inline LayeredParams codec_roundtrip(const FixedPointCodec& codec, const LayeredParams& params) {
    LayeredParams out = params;
    for (auto& l : out.layers)
        for (auto& v : l.values) v = codec.decode(codec.encode(v));
    return out;
}

}  // namespace fedsieve
