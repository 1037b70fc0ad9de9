//! The Trusted Boot enclave: AIK provisioning under integrator
//! authorization, hypervisor attestation against a pinned AIK, driver
//! approval, and delegated sealing-key derivation.

use crate::attest::local_attest_verify;
use crate::crypto::{
    hash_parts, truncate16, DeterministicRng, Digest, Signature, SymKey, VerifyKey,
};
use crate::enclave::{seal_data, unseal_data, CpuState, EnclaveInstance, KeyType, Measurement, Report};
use crate::platform::{DomainId, Handle, Platform, Resource};
use crate::tpm::{verify_quote, Quote, QuoteCheck};

/// Baked-in TB configuration: part of the measured image in the model.
#[derive(Clone)]
pub struct TbConfig {
    pub integrator_keys: Vec<VerifyKey>,
    pub driver_allowlist: Vec<Measurement>,
    pub golden_pcr: Digest,
    pub aik_pinning: bool,
}

/// Mutable TB enclave state across a boot epoch.
pub struct TbState {
    pub config: TbConfig,
    sealed_aik: Option<Vec<u8>>,
    /// Some(epoch) once hypervisor attestation passed in that epoch.
    attested_epoch: Option<u64>,
    pub epoch: u64,
}

impl TbState {
    pub fn new(config: TbConfig) -> Self {
        TbState {
            config,
            sealed_aik: None,
            attested_epoch: None,
            epoch: 0,
        }
    }

    /// A reboot invalidates the cached attestation verdict.
    pub fn next_epoch(&mut self) {
        self.epoch += 1;
        self.attested_epoch = None;
    }

    pub fn hypervisor_attested(&self) -> bool {
        self.attested_epoch == Some(self.epoch)
    }

    pub fn sealed_aik(&self) -> Option<&[u8]> {
        self.sealed_aik.as_deref()
    }

    /// Restore a sealed AIK blob, e.g. after a reboot or when an attacker
    /// replants a blob from another machine.
    pub fn restore_sealed_aik(&mut self, blob: Vec<u8>) {
        self.sealed_aik = Some(blob);
    }
}

/// Positive approval handed to a driver over the TB channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Approval {
    pub issued_to: Measurement,
    pub step: u64,
}

impl Approval {
    /// Wire format: verdict byte || issued-to || step counter.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![1u8];
        out.extend_from_slice(self.issued_to.as_bytes());
        out.extend_from_slice(&self.step.to_be_bytes());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProvisionError {
    #[error("AIK signature not issued by an approved system integrator")]
    UnauthorizedIntegrator,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttestError {
    #[error("no TPM capability; enclave was not launched by the hypervisor")]
    NoTpmAccess,
    #[error("no AIK has been provisioned or the sealed blob is unusable")]
    NoPinnedAik,
    #[error("quote rejected: {0:?}")]
    BadQuote(QuoteCheck),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApproveError {
    #[error("request did not arrive over a hypervisor-granted TB channel")]
    ChannelDenied,
    #[error("hypervisor attestation has not succeeded this epoch or the report failed verification")]
    AttestationFailed,
    #[error("driver measurement is not in the TB allowlist")]
    UnknownDriver,
}

/// Accept and seal an AIK, provided it carries an approved integrator's
/// signature over the key bytes.
pub fn provision_aik(
    cpu: &CpuState,
    tb: &EnclaveInstance,
    state: &mut TbState,
    rng: &mut DeterministicRng,
    aik_pub: &VerifyKey,
    integrator_sig: &Signature,
) -> Result<Vec<u8>, ProvisionError> {
    let msg = aik_pub.to_bytes();
    let authorized = state
        .config
        .integrator_keys
        .iter()
        .any(|k| k.verify(&msg, integrator_sig));
    if !authorized {
        return Err(ProvisionError::UnauthorizedIntegrator);
    }
    let blob = seal_data(cpu, tb, rng, &msg);
    state.sealed_aik = Some(blob.clone());
    Ok(blob)
}

fn unseal_pinned_aik(
    cpu: &CpuState,
    tb: &EnclaveInstance,
    state: &TbState,
) -> Result<VerifyKey, AttestError> {
    let blob = state.sealed_aik.as_ref().ok_or(AttestError::NoPinnedAik)?;
    let bytes = unseal_data(cpu, tb, blob).map_err(|_| AttestError::NoPinnedAik)?;
    let arr: [u8; 32] = bytes.try_into().map_err(|_| AttestError::NoPinnedAik)?;
    VerifyKey::from_bytes(&arr).ok_or(AttestError::NoPinnedAik)
}

/// Attest the hypervisor: obtain a TPM quote over a fresh nonce and check
/// origin, nonce and PCR. `quote_provider` models the (possibly
/// attacker-diverted) communication channel to a TPM.
pub fn attest_hypervisor(
    cpu: &CpuState,
    tb: &EnclaveInstance,
    state: &mut TbState,
    platform: &Platform,
    requesting_domain: DomainId,
    rng: &mut DeterministicRng,
    quote_provider: impl FnOnce([u8; 32]) -> Quote,
) -> Result<(), AttestError> {
    platform
        .request_resource(requesting_domain, Resource::Tpm)
        .map_err(|_| AttestError::NoTpmAccess)?;
    let nonce = rng.bytes32();
    let quote = quote_provider(nonce);
    let expected_aik = if state.config.aik_pinning {
        unseal_pinned_aik(cpu, tb, state)?
    } else {
        // pinning disabled: trust whatever AIK the quote arrived with
        quote.aik_pub
    };
    match verify_quote(&quote, &expected_aik, &state.config.golden_pcr, &nonce) {
        QuoteCheck::Ok => {
            state.attested_epoch = Some(state.epoch);
            Ok(())
        }
        bad => Err(AttestError::BadQuote(bad)),
    }
}

/// Approve a driver that reached the TB over a granted channel, locally
/// attested itself, and is on the allowlist.
pub fn approve_driver(
    cpu: &CpuState,
    tb: &EnclaveInstance,
    state: &TbState,
    driver_report: &Report,
    channel: Option<&Handle>,
    step: u64,
) -> Result<Approval, ApproveError> {
    match channel {
        Some(h) if h.resource == Resource::TbChannel => {}
        _ => return Err(ApproveError::ChannelDenied),
    }
    if !state.hypervisor_attested() {
        return Err(ApproveError::AttestationFailed);
    }
    if !local_attest_verify(cpu, tb, driver_report) {
        return Err(ApproveError::AttestationFailed);
    }
    if !state
        .config
        .driver_allowlist
        .contains(&driver_report.enclave_id)
    {
        return Err(ApproveError::UnknownDriver);
    }
    Ok(Approval {
        issued_to: driver_report.enclave_id,
        step,
    })
}

/// Delegated sealing: derive a requester-specific key from the TB's own
/// sealing key, only while hypervisor attestation holds.
pub fn delegated_seal_key(
    cpu: &CpuState,
    tb: &EnclaveInstance,
    state: &TbState,
    requester_report: &Report,
) -> Result<SymKey, ApproveError> {
    if !state.hypervisor_attested() {
        return Err(ApproveError::AttestationFailed);
    }
    if !local_attest_verify(cpu, tb, requester_report) {
        return Err(ApproveError::AttestationFailed);
    }
    let tb_seal = cpu.egetkey(tb, KeyType::SealKey);
    let derived = hash_parts(&[tb_seal.as_bytes(), requester_report.enclave_id.as_bytes()]);
    Ok(truncate16(&derived))
}
