#include "imup/chameleon.hpp"

#include <fstream>

namespace imup {

namespace {

Int reduce_digest(const Sha256Digest& d, const Int& q) {
  return from_be(ByteView(d.data(), d.size())) % q;
}

Int prime_scan(Int candidate, const Int& step, const Int& limit, long budget,
               const char* what) {
  for (long i = 0; i < budget; ++i) {
    if (candidate >= limit) break;
    if (is_prime(candidate)) return candidate;
    candidate += step;
  }
  throw Error(std::string("prime search exhausted attempt budget for ") + what);
}

}  // namespace

ChameleonDigest decode_digest(ByteView data) {
  if (data.empty()) throw Error("empty digest encoding");
  return ChameleonDigest{from_be(data), static_cast<std::uint32_t>(data.size())};
}

Int message_exponent(const ChameleonPublicKey& pk, ByteView m) {
  return reduce_digest(sha256(m), pk.q);
}

ChameleonDigest chash_exponent(const ChameleonPublicKey& pk, const Int& exponent, const Int& r) {
  if (r < 0 || r >= pk.q) throw Error("collision parameter r out of range");
  if (exponent < 0 || exponent >= pk.q) throw Error("message exponent out of range");
  Int value = powm(pk.g, exponent, pk.p) * powm(pk.h, r, pk.p) % pk.p;
  return ChameleonDigest{value, static_cast<std::uint32_t>(pk.digest_width())};
}

ChameleonDigest chash(const ChameleonPublicKey& pk, ByteView m, const Int& r) {
  return chash_exponent(pk, message_exponent(pk, m), r);
}

Int find_collision_exponent(const ChameleonKeyPair& kp, const Int& e_old, const Int& r,
                            const Int& e_new) {
  if (r < 0 || r >= kp.pk.q) throw Error("collision parameter r out of range");
  if (kp.trapdoor < 1 || kp.trapdoor >= kp.pk.q) throw Error("missing or invalid trapdoor");
  const Int& q = kp.pk.q;
  // g^e h^r = g^e' h^r'  =>  r' = r + (e - e') / x  (mod q)
  Int diff = (e_old - e_new) % q;
  if (diff < 0) diff += q;
  return (r + diff * invert_mod(kp.trapdoor, q)) % q;
}

Int find_collision(const ChameleonKeyPair& kp, ByteView m, const Int& r, ByteView m_new) {
  return find_collision_exponent(kp, message_exponent(kp.pk, m), r,
                                 message_exponent(kp.pk, m_new));
}

bool verify_pair(const ChameleonPublicKey& pk, ByteView m, const Int& r,
                 const ChameleonDigest& expected) {
  if (r < 0 || r >= pk.q) return false;
  return chash(pk, m, r) == expected;
}

ChameleonKeyPair toy_keypair() {
  ChameleonKeyPair kp;
  kp.pk.p = 23;
  kp.pk.q = 11;
  kp.pk.g = 2;
  kp.trapdoor = 3;
  kp.pk.h = 8;  // 2^3 mod 23
  return kp;
}

ChameleonKeyPair keygen(unsigned security_bits, ByteView seed) {
  if (security_bits < 16 || security_bits > 3072)
    throw Error("unsupported key size: " + std::to_string(security_bits));
  if (seed.empty()) throw Error("keygen seed must be nonempty");

  const unsigned pbits = security_bits;
  const unsigned qbits = security_bits >= 1024 ? 256 : security_bits / 2;

  Drbg root{seed};

  // q: random odd qbits value with the top bit set, scanned upward.
  Drbg rq = root.child("q");
  Int q;
  {
    Bytes buf = rq.bytes((qbits + 7) / 8);
    Int start = from_be(buf);
    Int top = Int(1) << (qbits - 1);
    start = start % top + top;  // force exact bit width
    if (start % 2 == 0) start += 1;
    q = prime_scan(start, 2, Int(1) << qbits, 1 << 20, "q");
  }

  // p = k*q + 1 with exactly pbits bits; k even keeps p odd.
  Int p;
  {
    Int low = Int(1) << (pbits - 1);
    Int k;
    mpz_cdiv_q(k.get_mpz_t(), low.get_mpz_t(), q.get_mpz_t());
    if (k % 2 != 0) k += 1;
    Int candidate = k * q + 1;
    Int limit = Int(1) << pbits;
    // Step 2q to stay on p = kq+1 with k even.
    p = prime_scan(candidate, 2 * q, limit, 1 << 20, "p");
  }

  // Generator of the order-q subgroup: a^((p-1)/q) for the first small base
  // that does not collapse to 1.
  Int cofactor = (p - 1) / q;
  Int g = 0;
  for (unsigned base = 2; base < 1000; ++base) {
    Int candidate = powm(base, cofactor, p);
    if (candidate != 1) {
      g = candidate;
      break;
    }
  }
  if (g == 0) throw Error("generator search failed");

  Drbg rx = root.child("x");
  Int x = uniform_below(rx, q - 1) + 1;

  ChameleonKeyPair kp;
  kp.pk.p = p;
  kp.pk.q = q;
  kp.pk.g = g;
  kp.pk.h = powm(g, x, p);
  kp.trapdoor = x;
  return kp;
}

void validate_keypair(const ChameleonKeyPair& kp) {
  const auto& pk = kp.pk;
  if (!is_prime(pk.p)) throw Error("p is not prime");
  if (!is_prime(pk.q)) throw Error("q is not prime");
  if ((pk.p - 1) % pk.q != 0) throw Error("q does not divide p-1");
  if (pk.g <= 1 || pk.g >= pk.p) throw Error("generator out of range");
  if (powm(pk.g, pk.q, pk.p) != 1) throw Error("generator order is not q");
  if (kp.trapdoor < 1 || kp.trapdoor >= pk.q) throw Error("trapdoor out of range");
  if (powm(pk.g, kp.trapdoor, pk.p) != pk.h) throw Error("public key does not match trapdoor");
}

unsigned leading_zero_nibbles(ByteView data) {
  unsigned count = 0;
  for (std::uint8_t b : data) {
    if (b == 0) {
      count += 2;
      continue;
    }
    if (b < 0x10) count += 1;
    break;
  }
  return count;
}

namespace {

constexpr std::string_view kKeyMagic = "IMUPKEY1";

void put_lp_int(Bytes& out, const Int& v) {
  put_lp(out, ByteView(to_fixed_be(v, byte_width(v))));
}

}  // namespace

void save_key_file(const std::filesystem::path& path, const ChameleonKeyPair& kp,
                   bool include_secret) {
  Bytes out;
  put_bytes(out, to_bytes(kKeyMagic));
  put_lp_int(out, kp.pk.p);
  put_lp_int(out, kp.pk.q);
  put_lp_int(out, kp.pk.g);
  put_lp_int(out, kp.pk.h);
  if (include_secret) put_lp_int(out, kp.trapdoor);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open key file for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("short write to key file: " + path.string());
}

LoadedKey load_key_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open key file: " + path.string());
  Bytes data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r{ByteView(data)};
  r.expect_magic(kKeyMagic);
  LoadedKey key;
  key.pk.p = from_be(r.lp_bytes());
  key.pk.q = from_be(r.lp_bytes());
  key.pk.g = from_be(r.lp_bytes());
  key.pk.h = from_be(r.lp_bytes());
  if (!r.done()) key.trapdoor = from_be(r.lp_bytes());
  return key;
}

ChameleonKeyPair require_trapdoor(const LoadedKey& key) {
  if (!key.trapdoor) throw Error("key file holds no trapdoor");
  ChameleonKeyPair kp{key.pk, *key.trapdoor};
  validate_keypair(kp);
  return kp;
}

}  // namespace imup
