//! Local attestation, the non-interactive key transport scheme with its
//! optional liveness confirmation, and chain attestation across the
//! remote → user app → driver → TB trust hierarchy.

use crate::crypto::{
    aead_open, aead_seal, cmac_parts, DeterministicRng, SymKey, VerifyKey,
};
use crate::enclave::{
    verify_remote_report, CpuState, EnclaveInstance, KeyType, Measurement, RemoteReport, Report,
};

/// The one message that crosses from sender to receiver: 32-byte sender
/// identity followed by a 32-byte nonce, no framing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyTransportMessage {
    pub sender_id: Measurement,
    pub nonce: [u8; 32],
}

impl KeyTransportMessage {
    pub const WIRE_LEN: usize = 64;

    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(self.sender_id.as_bytes());
        out[32..].copy_from_slice(&self.nonce);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<KeyTransportMessage> {
        if b.len() != Self::WIRE_LEN {
            return None;
        }
        let mut id = [0u8; 32];
        id.copy_from_slice(&b[..32]);
        let mut nonce = [0u8; 32];
        nonce.copy_from_slice(&b[32..]);
        Some(KeyTransportMessage {
            sender_id: Measurement(crate::crypto::Digest(id)),
            nonce,
        })
    }
}

/// Verifier-side local attestation: recompute the MAC under the
/// verifier's own report key and compare.
pub fn local_attest_verify(cpu: &CpuState, verifier: &EnclaveInstance, rp: &Report) -> bool {
    let rpkey = cpu.egetkey(verifier, KeyType::ReportKey);
    let expected = cmac_parts(&rpkey, &[rp.enclave_id.as_bytes(), &rp.data]);
    expected == rp.mac
}

/// Sender side of key transport: draw a nonce, generate a report over it
/// targeted at the receiver, keep the report private and use its MAC as
/// the shared key. Only (sender id, nonce) is transmitted.
pub fn key_transport_send(
    cpu: &CpuState,
    sender: &EnclaveInstance,
    receiver_id: Measurement,
    rng: &mut DeterministicRng,
) -> (SymKey, KeyTransportMessage) {
    let nonce = rng.bytes32();
    let rp = cpu.ereport(sender, receiver_id, nonce);
    let key = SymKey(rp.mac.0);
    (key, KeyTransportMessage {
        sender_id: sender.identity,
        nonce,
    })
}

/// Receiver side: recompute the MAC under the receiver's own report key.
/// Returns a key unconditionally; a mismatch surfaces as an AEAD failure
/// at first channel use.
pub fn key_transport_recv(
    cpu: &CpuState,
    receiver: &EnclaveInstance,
    msg: &KeyTransportMessage,
) -> SymKey {
    let rpkey = cpu.egetkey(receiver, KeyType::ReportKey);
    let mac = cmac_parts(&rpkey, &[msg.sender_id.as_bytes(), &msg.nonce]);
    SymKey(mac.0)
}

// Liveness confirmation uses a nonce outside the session counter
// schedule, which starts at zero per direction.
const CONFIRM_NONCE: [u8; 12] = [0xff; 12];
const CONFIRM_AAD: &[u8] = b"key-confirm";

/// Receiver-to-sender liveness proof: the session nonce encrypted under
/// the derived key.
pub fn key_confirm_create(key: &SymKey, session_nonce: &[u8; 32]) -> Vec<u8> {
    aead_seal(key, &CONFIRM_NONCE, session_nonce, CONFIRM_AAD)
}

/// Sender-side check: accepts iff decryption succeeds and the plaintext
/// equals this session's nonce. A confirmation replayed from an earlier
/// session carries the wrong nonce and is rejected.
pub fn key_confirm_verify(key: &SymKey, session_nonce: &[u8; 32], frame: &[u8]) -> bool {
    match aead_open(key, &CONFIRM_NONCE, frame, CONFIRM_AAD) {
        Ok(pt) => pt == session_nonce,
        Err(_) => false,
    }
}

/// Expected measurement and debug flag for one role in the hierarchy.
#[derive(Clone, Copy, Debug)]
pub struct RoleExpectation {
    pub measurement: Measurement,
    pub debug: bool,
}

/// Per-role expectations a verifier checks each link against.
#[derive(Clone, Debug)]
pub struct TrustPolicy {
    pub user_app: RoleExpectation,
    pub driver: RoleExpectation,
    pub tb: RoleExpectation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainLink {
    UserApp,
    Driver,
    Tb,
    Hypervisor,
}

impl ChainLink {
    pub fn name(&self) -> &'static str {
        match self {
            ChainLink::UserApp => "user-app",
            ChainLink::Driver => "driver",
            ChainLink::Tb => "tb",
            ChainLink::Hypervisor => "hypervisor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("trust chain broken at the {} link", .0.name())]
pub struct ChainBroken(pub ChainLink);

/// Evidence for one full chain attestation: the remote link is a
/// CPU-signed report, local links are local attestation reports, and the
/// hypervisor link is the TB's attestation verdict.
pub struct ChainEvidence<'a> {
    pub user_report: &'a RemoteReport,
    /// Driver report targeted at the user app.
    pub driver_report: &'a Report,
    /// TB report targeted at the driver.
    pub tb_report: &'a Report,
    pub hypervisor_attested: bool,
}

/// Walk the hierarchy top-down and name the first failing link.
pub fn attest_chain(
    cpu: &CpuState,
    cpu_attestation_pubkey: &VerifyKey,
    policy: &TrustPolicy,
    user_app: &EnclaveInstance,
    driver: &EnclaveInstance,
    evidence: &ChainEvidence<'_>,
) -> Result<(), ChainBroken> {
    let ur = evidence.user_report;
    if !verify_remote_report(cpu_attestation_pubkey, ur)
        || ur.identity != policy.user_app.measurement
        || ur.debug != policy.user_app.debug
    {
        return Err(ChainBroken(ChainLink::UserApp));
    }
    let dr = evidence.driver_report;
    if !local_attest_verify(cpu, user_app, dr) || dr.enclave_id != policy.driver.measurement {
        return Err(ChainBroken(ChainLink::Driver));
    }
    let tr = evidence.tb_report;
    if !local_attest_verify(cpu, driver, tr) || tr.enclave_id != policy.tb.measurement {
        return Err(ChainBroken(ChainLink::Tb));
    }
    if !evidence.hypervisor_attested {
        return Err(ChainBroken(ChainLink::Hypervisor));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::cmac;
    use crate::enclave::{measure, EnclaveImage, HostContext, LaunchAuthority};

    struct Fixture {
        cpu: CpuState,
        la: LaunchAuthority,
        rng: DeterministicRng,
    }

    impl Fixture {
        fn new(seed: u64) -> Self {
            let mut rng = DeterministicRng::from_seed(seed);
            let la = LaunchAuthority::generate(&mut rng);
            let cpu = CpuState::new(&mut rng, la.public());
            Fixture { cpu, la, rng }
        }

        fn launch(&mut self, tag: &[u8], debug: bool) -> EnclaveInstance {
            let image = EnclaveImage::new(vec![tag.to_vec()], debug);
            let m = measure(&image);
            self.cpu
                .launch(&image, &self.la.issue_token(m, debug), m, HostContext::Os)
                .unwrap()
        }
    }

    #[test]
    fn local_attestation_accepts_genuine_report() {
        let mut fx = Fixture::new(1);
        let prover = fx.launch(b"prover", false);
        let verifier = fx.launch(b"verifier", false);
        let rp = fx.cpu.ereport(&prover, verifier.identity, [3u8; 32]);
        assert!(local_attest_verify(&fx.cpu, &verifier, &rp));
    }

    #[test]
    fn report_for_third_enclave_rejected() {
        let mut fx = Fixture::new(2);
        let prover = fx.launch(b"prover", false);
        let verifier = fx.launch(b"verifier", false);
        let third = fx.launch(b"third", false);
        let rp = fx.cpu.ereport(&prover, third.identity, [0u8; 32]);
        assert!(!local_attest_verify(&fx.cpu, &verifier, &rp));
    }

    #[test]
    fn any_flipped_bit_in_report_rejected() {
        let mut fx = Fixture::new(3);
        let prover = fx.launch(b"prover", false);
        let verifier = fx.launch(b"verifier", false);
        let rp = fx.cpu.ereport(&prover, verifier.identity, [9u8; 32]);
        // report wire layout: id || data || mac = 80 bytes
        for trial in 0..1000 {
            let bit = (trial * 13) % (80 * 8);
            let mut bytes = [0u8; 80];
            bytes[..32].copy_from_slice(rp.enclave_id.as_bytes());
            bytes[32..64].copy_from_slice(&rp.data);
            bytes[64..].copy_from_slice(&rp.mac.0);
            bytes[bit / 8] ^= 1 << (bit % 8);
            let mut id = [0u8; 32];
            id.copy_from_slice(&bytes[..32]);
            let mut data = [0u8; 32];
            data.copy_from_slice(&bytes[32..64]);
            let mut mac = [0u8; 16];
            mac.copy_from_slice(&bytes[64..]);
            let tampered = Report {
                enclave_id: Measurement(crate::crypto::Digest(id)),
                data,
                mac: crate::crypto::MacTag(mac),
            };
            assert!(!local_attest_verify(&fx.cpu, &verifier, &tampered));
        }
    }

    #[test]
    fn key_transport_agreement_and_length() {
        let mut fx = Fixture::new(4);
        let a = fx.launch(b"a", false);
        let b = fx.launch(b"b", false);
        let (key_a, msg) = key_transport_send(&fx.cpu, &a, b.identity, &mut fx.rng);
        assert_eq!(key_a.as_bytes().len(), 16);
        let key_b = key_transport_recv(&fx.cpu, &b, &msg);
        assert_eq!(key_a, key_b);
    }

    #[test]
    fn wrong_receiver_derives_different_key() {
        let mut fx = Fixture::new(5);
        let a = fx.launch(b"a", false);
        let b = fx.launch(b"b", false);
        let c = fx.launch(b"c", false);
        let (key_a, msg) = key_transport_send(&fx.cpu, &a, b.identity, &mut fx.rng);
        let key_c = key_transport_recv(&fx.cpu, &c, &msg);
        assert_ne!(key_a, key_c);
    }

    #[test]
    fn nonce_bit_changes_key() {
        let mut fx = Fixture::new(6);
        let a = fx.launch(b"a", false);
        let b = fx.launch(b"b", false);
        let (key_a, mut msg) = key_transport_send(&fx.cpu, &a, b.identity, &mut fx.rng);
        msg.nonce[0] ^= 1;
        let key_b = key_transport_recv(&fx.cpu, &b, &msg);
        assert_ne!(key_a, key_b);
    }

    #[test]
    fn transport_key_matches_manual_cmac_oracle() {
        let mut fx = Fixture::new(7);
        let a = fx.launch(b"a", false);
        let b = fx.launch(b"b", false);
        let (key, msg) = key_transport_send(&fx.cpu, &a, b.identity, &mut fx.rng);
        // oracle: key = CMAC(report key of B, A_ID || nonce)
        let rpkey = fx.cpu.egetkey(&b, KeyType::ReportKey);
        let mut buf = a.identity.as_bytes().to_vec();
        buf.extend_from_slice(&msg.nonce);
        assert_eq!(key, SymKey(cmac(&rpkey, &buf).0));
    }

    #[test]
    fn key_confirm_accept_reject_replay() {
        let mut fx = Fixture::new(8);
        let a = fx.launch(b"a", false);
        let b = fx.launch(b"b", false);
        let (key, msg) = key_transport_send(&fx.cpu, &a, b.identity, &mut fx.rng);
        let key_b = key_transport_recv(&fx.cpu, &b, &msg);
        let frame = key_confirm_create(&key_b, &msg.nonce);
        assert!(key_confirm_verify(&key, &msg.nonce, &frame));

        // wrong key at B
        let c = fx.launch(b"c", false);
        let wrong = key_transport_recv(&fx.cpu, &c, &msg);
        let bad = key_confirm_create(&wrong, &msg.nonce);
        assert!(!key_confirm_verify(&key, &msg.nonce, &bad));

        // replay against a later session
        let (key2, msg2) = key_transport_send(&fx.cpu, &a, b.identity, &mut fx.rng);
        assert_ne!(msg.nonce, msg2.nonce);
        assert!(!key_confirm_verify(&key2, &msg2.nonce, &frame));
    }

    #[test]
    fn wire_encoding_roundtrip() {
        let mut fx = Fixture::new(9);
        let a = fx.launch(b"a", false);
        let b = fx.launch(b"b", false);
        let (_, msg) = key_transport_send(&fx.cpu, &a, b.identity, &mut fx.rng);
        let bytes = msg.to_bytes();
        assert_eq!(bytes.len(), KeyTransportMessage::WIRE_LEN);
        assert_eq!(KeyTransportMessage::from_bytes(&bytes), Some(msg));
        assert_eq!(KeyTransportMessage::from_bytes(&bytes[..63]), None);
    }

    fn chain_fixture() -> (Fixture, EnclaveInstance, EnclaveInstance, EnclaveInstance, TrustPolicy)
    {
        let mut fx = Fixture::new(10);
        let app = fx.launch(b"app", false);
        let driver = fx.launch(b"driver", false);
        let tb = fx.launch(b"tb", false);
        let policy = TrustPolicy {
            user_app: RoleExpectation {
                measurement: app.identity,
                debug: false,
            },
            driver: RoleExpectation {
                measurement: driver.identity,
                debug: false,
            },
            tb: RoleExpectation {
                measurement: tb.identity,
                debug: false,
            },
        };
        (fx, app, driver, tb, policy)
    }

    #[test]
    fn chain_passes_on_honest_stack_and_names_broken_links() {
        let (fx, app, driver, tb, policy) = chain_fixture();
        let user_report = fx.cpu.remote_report(&app, [0u8; 32]);
        let driver_report = fx.cpu.ereport(&driver, app.identity, [0u8; 32]);
        let tb_report = fx.cpu.ereport(&tb, driver.identity, [0u8; 32]);
        let pubkey = fx.cpu.attestation_pubkey();

        let ev = ChainEvidence {
            user_report: &user_report,
            driver_report: &driver_report,
            tb_report: &tb_report,
            hypervisor_attested: true,
        };
        assert!(attest_chain(&fx.cpu, &pubkey, &policy, &app, &driver, &ev).is_ok());

        // driver measurement not in policy
        let mut bad_policy = policy.clone();
        bad_policy.driver.measurement = Measurement(crate::crypto::hash(b"other"));
        assert_eq!(
            attest_chain(&fx.cpu, &pubkey, &bad_policy, &app, &driver, &ev),
            Err(ChainBroken(ChainLink::Driver))
        );

        // TB approval withheld
        let ev2 = ChainEvidence {
            hypervisor_attested: false,
            ..ChainEvidence {
                user_report: &user_report,
                driver_report: &driver_report,
                tb_report: &tb_report,
                hypervisor_attested: false,
            }
        };
        assert_eq!(
            attest_chain(&fx.cpu, &pubkey, &policy, &app, &driver, &ev2),
            Err(ChainBroken(ChainLink::Hypervisor))
        );
    }
}
