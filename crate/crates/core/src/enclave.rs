//! Modeled CPU with enclave support: chained measurement, verified
//! launch, report and sealing key derivation, debug access.

use crate::crypto::{
    cmac_parts, hash, hash_parts, truncate16, Digest, DeterministicRng, MacTag, SigKeyPair,
    Signature, SymKey, VerifyKey,
};

/// Chained hash over an enclave's pages and debug flag; the enclave's
/// identity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Measurement(pub Digest);

impl Measurement {
    pub fn as_bytes(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

/// Immutable enclave image: ordered pages plus the debug flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnclaveImage {
    pub pages: Vec<Vec<u8>>,
    pub debug: bool,
}

impl EnclaveImage {
    pub fn new(pages: Vec<Vec<u8>>, debug: bool) -> Self {
        EnclaveImage { pages, debug }
    }
}

/// Chained measurement: m0 = H(debug byte), m_{i+1} = H(m_i || page_i).
pub fn measure(image: &EnclaveImage) -> Measurement {
    let mut m = hash(&[image.debug as u8]);
    for page in &image.pages {
        m = hash_parts(&[m.as_bytes(), page]);
    }
    Measurement(m)
}

/// Launch token signed by the launch authority.
#[derive(Clone, Debug)]
pub struct EinitToken {
    pub target_measurement: Measurement,
    pub debug: bool,
    pub signature: Signature,
}

fn token_message(target: &Measurement, debug: bool) -> Vec<u8> {
    let mut msg = Vec::with_capacity(33);
    msg.extend_from_slice(target.as_bytes());
    msg.push(debug as u8);
    msg
}

/// Holds the launch signing key and issues launch tokens.
pub struct LaunchAuthority {
    keypair: SigKeyPair,
}

impl LaunchAuthority {
    pub fn generate(rng: &mut DeterministicRng) -> Self {
        LaunchAuthority {
            keypair: SigKeyPair::generate(rng),
        }
    }

    pub fn public(&self) -> VerifyKey {
        self.keypair.public()
    }

    pub fn issue_token(&self, target: Measurement, debug: bool) -> EinitToken {
        EinitToken {
            target_measurement: target,
            debug,
            signature: self.keypair.sign(&token_message(&target, debug)),
        }
    }
}

/// Which side of the hypervisor/VM boundary hosts an enclave.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HostContext {
    Hypervisor,
    Os,
}

/// A launched enclave. Private memory is reachable only through the
/// methods here; the identity is fixed at launch.
#[derive(Debug)]
pub struct EnclaveInstance {
    pub identity: Measurement,
    pub debug: bool,
    pub host_context: HostContext,
    memory: Vec<u8>,
}

impl EnclaveInstance {
    /// Enclave-internal memory access (code running inside the enclave).
    pub fn private_write(&mut self, offset: usize, bytes: &[u8]) {
        if self.memory.len() < offset + bytes.len() {
            self.memory.resize(offset + bytes.len(), 0);
        }
        self.memory[offset..offset + bytes.len()].copy_from_slice(bytes);
    }

    pub fn private_read(&self, offset: usize, len: usize) -> Vec<u8> {
        let end = (offset + len).min(self.memory.len());
        let mut out = self.memory.get(offset..end).unwrap_or(&[]).to_vec();
        out.resize(len, 0);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LaunchError {
    #[error("enclave measurement does not match the vendor-expected value")]
    MeasurementMismatch,
    #[error("launch token invalid for this enclave")]
    InvalidToken,
    #[error("launch token debug flag does not match the image")]
    DebugFlagMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DebugError {
    #[error("target is a production enclave")]
    ProductionEnclave,
    #[error("debug instruction intercepted by the platform")]
    Intercepted,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum KeyType {
    ReportKey,
    SealKey,
}

/// Local attestation report: (enclave id, user data, MAC under the
/// target's report key).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Report {
    pub enclave_id: Measurement,
    pub data: [u8; 32],
    pub mac: MacTag,
}

/// CPU-signed report for remote attestation; carries the debug flag so a
/// verifier can reject debug enclaves.
#[derive(Clone, Debug)]
pub struct RemoteReport {
    pub identity: Measurement,
    pub debug: bool,
    pub data: [u8; 32],
    pub signature: Signature,
}

fn remote_report_message(identity: &Measurement, debug: bool, data: &[u8; 32]) -> Vec<u8> {
    let mut msg = Vec::with_capacity(65);
    msg.extend_from_slice(identity.as_bytes());
    msg.push(debug as u8);
    msg.extend_from_slice(data);
    msg
}

/// Per-machine trust anchor: a secret the CPU never reveals, an
/// attestation signing key, and the launch authority's public key.
pub struct CpuState {
    cpu_secret: [u8; 32],
    attestation_keypair: SigKeyPair,
    launch_pubkey: VerifyKey,
}

impl CpuState {
    pub fn new(rng: &mut DeterministicRng, launch_pubkey: VerifyKey) -> Self {
        CpuState {
            cpu_secret: rng.bytes32(),
            attestation_keypair: SigKeyPair::generate(rng),
            launch_pubkey,
        }
    }

    pub fn attestation_pubkey(&self) -> VerifyKey {
        self.attestation_keypair.public()
    }

    /// Report key for a given enclave identity, derivable only through
    /// this CPU. Domain-separated from the sealing key.
    fn report_key(&self, id: &Measurement) -> SymKey {
        truncate16(&hash_parts(&[&self.cpu_secret, b"report", id.as_bytes()]))
    }

    fn seal_key(&self, id: &Measurement) -> SymKey {
        truncate16(&hash_parts(&[&self.cpu_secret, b"seal", id.as_bytes()]))
    }

    /// Verified launch: measurement check against the vendor-expected
    /// value, token signature check, token/image agreement.
    pub fn launch(
        &self,
        image: &EnclaveImage,
        token: &EinitToken,
        vendor_expected: Measurement,
        ctx: HostContext,
    ) -> Result<EnclaveInstance, LaunchError> {
        let m = measure(image);
        if m != vendor_expected {
            return Err(LaunchError::MeasurementMismatch);
        }
        let msg = token_message(&token.target_measurement, token.debug);
        if !self.launch_pubkey.verify(&msg, &token.signature) {
            return Err(LaunchError::InvalidToken);
        }
        if token.target_measurement != m {
            return Err(LaunchError::InvalidToken);
        }
        if token.debug != image.debug {
            return Err(LaunchError::DebugFlagMismatch);
        }
        Ok(EnclaveInstance {
            identity: m,
            debug: image.debug,
            host_context: ctx,
            memory: Vec::new(),
        })
    }

    /// Report of `this` enclave targeted at `target_id`, MAC'd under the
    /// target's report key.
    pub fn ereport(
        &self,
        this: &EnclaveInstance,
        target_id: Measurement,
        data: [u8; 32],
    ) -> Report {
        let rpkey = self.report_key(&target_id);
        Report {
            enclave_id: this.identity,
            data,
            mac: cmac_parts(&rpkey, &[this.identity.as_bytes(), &data]),
        }
    }

    /// Key derivation available only to the enclave itself.
    pub fn egetkey(&self, this: &EnclaveInstance, key_type: KeyType) -> SymKey {
        match key_type {
            KeyType::ReportKey => self.report_key(&this.identity),
            KeyType::SealKey => self.seal_key(&this.identity),
        }
    }

    /// CPU-signed structure for remote attestation.
    pub fn remote_report(&self, this: &EnclaveInstance, data: [u8; 32]) -> RemoteReport {
        let msg = remote_report_message(&this.identity, this.debug, &data);
        RemoteReport {
            identity: this.identity,
            debug: this.debug,
            data,
            signature: self.attestation_keypair.sign(&msg),
        }
    }
}

const SEAL_AAD: &[u8] = b"sealed-blob";

/// Seal data under the enclave's sealing key. The AEAD tag is the
/// integrity redundancy; layout is 12-byte nonce || ciphertext || tag.
pub fn seal_data(
    cpu: &CpuState,
    this: &EnclaveInstance,
    rng: &mut DeterministicRng,
    plaintext: &[u8],
) -> Vec<u8> {
    let key = cpu.egetkey(this, KeyType::SealKey);
    let nonce: [u8; 12] = rng.bytes(12).try_into().unwrap();
    let mut out = nonce.to_vec();
    out.extend_from_slice(&crate::crypto::aead_seal(&key, &nonce, plaintext, SEAL_AAD));
    out
}

/// Unseal a blob; fails for any other enclave identity or CPU.
pub fn unseal_data(
    cpu: &CpuState,
    this: &EnclaveInstance,
    blob: &[u8],
) -> Result<Vec<u8>, crate::crypto::AuthFailure> {
    if blob.len() < 12 {
        return Err(crate::crypto::AuthFailure);
    }
    let key = cpu.egetkey(this, KeyType::SealKey);
    let nonce: [u8; 12] = blob[..12].try_into().unwrap();
    crate::crypto::aead_open(&key, &nonce, &blob[12..], SEAL_AAD)
}

/// Remote report check under a given CPU attestation public key.
pub fn verify_remote_report(pubkey: &VerifyKey, report: &RemoteReport) -> bool {
    let msg = remote_report_message(&report.identity, report.debug, &report.data);
    pubkey.verify(&msg, &report.signature)
}

/// OS-side EDBGRD. Callers go through the platform's instruction gate
/// first; this only enforces the debug-mode check.
pub fn debug_read(
    instance: &EnclaveInstance,
    offset: usize,
    len: usize,
) -> Result<Vec<u8>, DebugError> {
    if !instance.debug {
        return Err(DebugError::ProductionEnclave);
    }
    Ok(instance.private_read(offset, len))
}

/// OS-side EDBGWR.
pub fn debug_write(
    instance: &mut EnclaveInstance,
    offset: usize,
    bytes: &[u8],
) -> Result<(), DebugError> {
    if !instance.debug {
        return Err(DebugError::ProductionEnclave);
    }
    instance.private_write(offset, bytes);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> DeterministicRng {
        DeterministicRng::from_seed(42)
    }

    fn cpu_and_authority() -> (CpuState, LaunchAuthority) {
        let mut r = rng();
        let la = LaunchAuthority::generate(&mut r);
        let cpu = CpuState::new(&mut r, la.public());
        (cpu, la)
    }

    #[test]
    fn measure_empty_image_is_hash_of_debug_byte() {
        let img = EnclaveImage::new(vec![], false);
        assert_eq!(measure(&img).0, hash(&[0u8]));
        let img = EnclaveImage::new(vec![], true);
        assert_eq!(measure(&img).0, hash(&[1u8]));
    }

    #[test]
    fn debug_flag_changes_measurement() {
        let pages = vec![b"page-a".to_vec(), b"page-b".to_vec()];
        let prod = measure(&EnclaveImage::new(pages.clone(), false));
        let dbg = measure(&EnclaveImage::new(pages, true));
        assert_ne!(prod, dbg);
    }

    #[test]
    fn page_swap_changes_measurement() {
        let mut r = rng();
        for _ in 0..1000 {
            let a = r.bytes(16);
            let b = r.bytes(16);
            if a == b {
                continue;
            }
            let m1 = measure(&EnclaveImage::new(vec![a.clone(), b.clone()], false));
            let m2 = measure(&EnclaveImage::new(vec![b, a], false));
            assert_ne!(m1, m2);
        }
    }

    #[test]
    fn measurement_chain_matches_independent_recompute() {
        let mut r = rng();
        for _ in 0..100 {
            let pages: Vec<Vec<u8>> = (0..3).map(|_| r.bytes(20)).collect();
            let img = EnclaveImage::new(pages.clone(), true);
            // independent oracle: fold the chain by hand
            let mut m = hash(&[1u8]);
            for p in &pages {
                let mut buf = m.as_bytes().to_vec();
                buf.extend_from_slice(p);
                m = hash(&buf);
            }
            assert_eq!(measure(&img).0, m);
        }
    }

    #[test]
    fn launch_check_matrix() {
        let (cpu, la) = cpu_and_authority();
        let image = EnclaveImage::new(vec![b"code".to_vec()], false);
        let m = measure(&image);
        let good_token = la.issue_token(m, false);

        // all checks pass
        let inst = cpu
            .launch(&image, &good_token, m, HostContext::Hypervisor)
            .unwrap();
        assert_eq!(inst.identity, m);

        // tampered page
        let tampered = EnclaveImage::new(vec![b"c0de".to_vec()], false);
        assert_eq!(
            cpu.launch(&tampered, &good_token, m, HostContext::Hypervisor).err(),
            Some(LaunchError::MeasurementMismatch)
        );

        // token from a non-launch key
        let mut r = DeterministicRng::from_seed(777);
        let rogue = LaunchAuthority::generate(&mut r);
        let rogue_token = rogue.issue_token(m, false);
        assert_eq!(
            cpu.launch(&image, &rogue_token, m, HostContext::Hypervisor).err(),
            Some(LaunchError::InvalidToken)
        );

        // token targeting a different measurement
        let other = measure(&EnclaveImage::new(vec![b"other".to_vec()], false));
        let wrong_target = la.issue_token(other, false);
        assert_eq!(
            cpu.launch(&image, &wrong_target, m, HostContext::Hypervisor).err(),
            Some(LaunchError::InvalidToken)
        );

        // token debug flag mismatch
        let wrong_debug = la.issue_token(m, true);
        assert_eq!(
            cpu.launch(&image, &wrong_debug, m, HostContext::Hypervisor).err(),
            Some(LaunchError::DebugFlagMismatch)
        );

        // vendor expectation wrong
        assert_eq!(
            cpu.launch(&image, &good_token, other, HostContext::Hypervisor).err(),
            Some(LaunchError::MeasurementMismatch)
        );
    }

    #[test]
    fn ereport_fields_and_determinism() {
        let (cpu, la) = cpu_and_authority();
        let image = EnclaveImage::new(vec![b"src".to_vec()], false);
        let m = measure(&image);
        let inst = cpu
            .launch(&image, &la.issue_token(m, false), m, HostContext::Os)
            .unwrap();
        let target = Measurement(hash(b"target"));
        let data = [7u8; 32];
        let rp = cpu.ereport(&inst, target, data);
        assert_eq!(rp.enclave_id, inst.identity);
        assert_eq!(rp.data, data);
        assert_eq!(rp, cpu.ereport(&inst, target, data));
    }

    #[test]
    fn sealing_key_stable_across_relaunch_and_cpu_bound() {
        let (cpu, la) = cpu_and_authority();
        let image = EnclaveImage::new(vec![b"sealer".to_vec()], false);
        let m = measure(&image);
        let token = la.issue_token(m, false);
        let a = cpu.launch(&image, &token, m, HostContext::Os).unwrap();
        let b = cpu.launch(&image, &token, m, HostContext::Os).unwrap();
        assert_eq!(
            cpu.egetkey(&a, KeyType::SealKey),
            cpu.egetkey(&b, KeyType::SealKey)
        );
        // different cpu secret, same identity
        let mut r2 = DeterministicRng::from_seed(99);
        let la2 = LaunchAuthority::generate(&mut r2);
        let cpu2 = CpuState::new(&mut r2, la2.public());
        let c = cpu2
            .launch(&image, &la2.issue_token(m, false), m, HostContext::Os)
            .unwrap();
        assert_ne!(
            cpu.egetkey(&a, KeyType::SealKey),
            cpu2.egetkey(&c, KeyType::SealKey)
        );
        // report key and seal key differ
        assert_ne!(
            cpu.egetkey(&a, KeyType::ReportKey),
            cpu.egetkey(&a, KeyType::SealKey)
        );
    }

    #[test]
    fn remote_report_verifies_only_under_issuing_cpu() {
        let (cpu, la) = cpu_and_authority();
        let image = EnclaveImage::new(vec![b"remote".to_vec()], true);
        let m = measure(&image);
        let inst = cpu
            .launch(&image, &la.issue_token(m, true), m, HostContext::Os)
            .unwrap();
        let rr = cpu.remote_report(&inst, [1u8; 32]);
        assert!(verify_remote_report(&cpu.attestation_pubkey(), &rr));
        assert!(rr.debug);
        let mut r2 = DeterministicRng::from_seed(77);
        let la2 = LaunchAuthority::generate(&mut r2);
        let cpu2 = CpuState::new(&mut r2, la2.public());
        assert!(!verify_remote_report(&cpu2.attestation_pubkey(), &rr));
    }

    #[test]
    fn debug_access_gated_on_mode() {
        let (cpu, la) = cpu_and_authority();
        let prod_img = EnclaveImage::new(vec![b"p".to_vec()], false);
        let pm = measure(&prod_img);
        let prod = cpu
            .launch(&prod_img, &la.issue_token(pm, false), pm, HostContext::Os)
            .unwrap();
        assert_eq!(debug_read(&prod, 0, 4), Err(DebugError::ProductionEnclave));

        let dbg_img = EnclaveImage::new(vec![b"d".to_vec()], true);
        let dm = measure(&dbg_img);
        let mut dbg = cpu
            .launch(&dbg_img, &la.issue_token(dm, true), dm, HostContext::Os)
            .unwrap();
        debug_write(&mut dbg, 0, b"spy").unwrap();
        assert_eq!(debug_read(&dbg, 0, 3).unwrap(), b"spy");
    }
}
