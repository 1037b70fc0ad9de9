//! Modeled TPM: a single PCR, an AIK, and quote generation. Multiple
//! instances can coexist so quote-origin attacks are expressible.

use crate::crypto::{hash_parts, Digest, DeterministicRng, SigKeyPair, Signature, VerifyKey};

/// Signed statement over (PCR value, nonce) under the TPM's AIK.
#[derive(Clone, Debug)]
pub struct Quote {
    pub pcr_value: Digest,
    pub nonce: [u8; 32],
    pub signature: Signature,
    /// Public AIK delivered with the quote. A verifier that pins the AIK
    /// ignores this field.
    pub aik_pub: VerifyKey,
}

fn quote_message(pcr: &Digest, nonce: &[u8; 32]) -> Vec<u8> {
    let mut msg = Vec::with_capacity(64);
    msg.extend_from_slice(pcr.as_bytes());
    msg.extend_from_slice(nonce);
    msg
}

pub struct Tpm {
    pub label: String,
    pcr: Digest,
    aik: SigKeyPair,
}

impl Tpm {
    pub fn new(label: &str, rng: &mut DeterministicRng) -> Self {
        Tpm {
            label: label.to_string(),
            pcr: Digest::ZERO,
            aik: SigKeyPair::generate(rng),
        }
    }

    pub fn pcr(&self) -> Digest {
        self.pcr
    }

    pub fn reset(&mut self) {
        self.pcr = Digest::ZERO;
    }

    /// PCR extension: pcr <- H(pcr || m).
    pub fn extend(&mut self, m: &Digest) {
        self.pcr = hash_parts(&[self.pcr.as_bytes(), m.as_bytes()]);
    }

    pub fn aik_public(&self) -> VerifyKey {
        self.aik.public()
    }

    pub fn quote(&self, nonce: [u8; 32]) -> Quote {
        Quote {
            pcr_value: self.pcr,
            nonce,
            signature: self.aik.sign(&quote_message(&self.pcr, &nonce)),
            aik_pub: self.aik.public(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum QuoteCheck {
    Ok,
    /// Signature does not verify under the expected AIK.
    BadOrigin,
    /// Nonce does not match the challenge (replay).
    BadNonce,
    /// PCR differs from the golden value.
    BadPcr,
}

/// Verify a quote against an expected AIK, golden PCR and fresh nonce.
/// Origin is checked first: a quote from the wrong TPM is rejected even
/// if its contents happen to match.
pub fn verify_quote(
    quote: &Quote,
    expected_aik: &VerifyKey,
    golden_pcr: &Digest,
    expected_nonce: &[u8; 32],
) -> QuoteCheck {
    let msg = quote_message(&quote.pcr_value, &quote.nonce);
    if !expected_aik.verify(&msg, &quote.signature) {
        return QuoteCheck::BadOrigin;
    }
    if &quote.nonce != expected_nonce {
        return QuoteCheck::BadNonce;
    }
    if &quote.pcr_value != golden_pcr {
        return QuoteCheck::BadPcr;
    }
    QuoteCheck::Ok
}

/// Recompute the PCR a boot script should produce, for golden values.
pub fn golden_pcr(stage_measurements: &[Digest]) -> Digest {
    let mut pcr = Digest::ZERO;
    for m in stage_measurements {
        pcr = hash_parts(&[pcr.as_bytes(), m.as_bytes()]);
    }
    pcr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    fn rng() -> DeterministicRng {
        DeterministicRng::from_seed(13)
    }

    #[test]
    fn extend_matches_definition() {
        let mut r = rng();
        let mut tpm = Tpm::new("t", &mut r);
        let m = hash(b"stage");
        tpm.extend(&m);
        assert_eq!(tpm.pcr(), hash_parts(&[Digest::ZERO.as_bytes(), m.as_bytes()]));
    }

    #[test]
    fn extend_is_not_idempotent() {
        let mut r = rng();
        let mut once = Tpm::new("a", &mut r);
        let mut twice = Tpm::new("b", &mut r);
        let m = hash(b"m");
        once.extend(&m);
        twice.extend(&m);
        twice.extend(&m);
        assert_ne!(once.pcr(), twice.pcr());
    }

    #[test]
    fn extend_order_matters() {
        let mut r = rng();
        for _ in 0..200 {
            let a = hash(&r.bytes(8));
            let b = hash(&r.bytes(8));
            if a == b {
                continue;
            }
            let mut ab = Tpm::new("ab", &mut r);
            ab.extend(&a);
            ab.extend(&b);
            let mut ba = Tpm::new("ba", &mut r);
            ba.extend(&b);
            ba.extend(&a);
            assert_ne!(ab.pcr(), ba.pcr());
        }
    }

    #[test]
    fn quote_verifies_for_honest_boot() {
        let mut r = rng();
        let mut tpm = Tpm::new("t", &mut r);
        let stages = [hash(b"fw"), hash(b"hv")];
        for s in &stages {
            tpm.extend(s);
        }
        let golden = golden_pcr(&stages);
        let nonce = r.bytes32();
        let q = tpm.quote(nonce);
        assert_eq!(
            verify_quote(&q, &tpm.aik_public(), &golden, &nonce),
            QuoteCheck::Ok
        );
        // replay: different expected nonce
        let other_nonce = r.bytes32();
        assert_eq!(
            verify_quote(&q, &tpm.aik_public(), &golden, &other_nonce),
            QuoteCheck::BadNonce
        );
    }

    #[test]
    fn cross_tpm_quotes_never_verify() {
        let mut r = rng();
        let tpm1 = Tpm::new("t1", &mut r);
        let tpm2 = Tpm::new("t2", &mut r);
        let nonce = r.bytes32();
        let q2 = tpm2.quote(nonce);
        assert_eq!(
            verify_quote(&q2, &tpm1.aik_public(), &tpm2.pcr(), &nonce),
            QuoteCheck::BadOrigin
        );
        let q1 = tpm1.quote(nonce);
        assert_eq!(
            verify_quote(&q1, &tpm2.aik_public(), &tpm1.pcr(), &nonce),
            QuoteCheck::BadOrigin
        );
    }
}
