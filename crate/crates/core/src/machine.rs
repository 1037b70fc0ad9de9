//! One simulated machine: CPU, TPM(s), platform, enclaves, drivers and
//! the untrusted OS, driven step by step with every cross-domain action
//! recorded in the trace.
//!
//! Action methods return a kebab-case outcome string that is also logged
//! to the trace; defenses produce denials as outcomes, never panics.

use std::collections::{BTreeMap, BTreeSet};

use crate::attest::{
    attest_chain, key_confirm_create, key_confirm_verify, key_transport_recv, key_transport_send,
    ChainBroken, ChainEvidence, RoleExpectation, TrustPolicy,
};
use crate::crypto::{hash, DeterministicRng, Digest, SigKeyPair};
use crate::enclave::{
    debug_read, debug_write, measure, seal_data, unseal_data, CpuState, DebugError, EnclaveImage,
    EnclaveInstance, HostContext, LaunchAuthority, Measurement,
};
use crate::platform::{
    ClaimVerdict, DeviceId, DmaVerdict, DomainId, EnclsVerdict, Handle, InterruptVerdict,
    MemRegion, MmioClaim, MmioRange, Platform, Resource,
};
use crate::tb::{
    approve_driver, attest_hypervisor, delegated_seal_key, provision_aik, ApproveError,
    AttestError, TbConfig, TbState,
};
use crate::tpm::{QuoteCheck, Tpm};
use crate::trace::{Trace, TraceEvent};
use crate::trusted_path::{ChannelError, Direction, PathMode, SessionEndpoint};

#[derive(Clone, Debug)]
pub struct EnclaveSpec {
    pub name: String,
    pub image: EnclaveImage,
    pub context: HostContext,
}

#[derive(Clone, Debug)]
pub struct DeviceSpec {
    pub id: DeviceId,
    pub mmio: Option<MmioRange>,
}

/// Everything needed to build a machine, independent of any config file
/// format.
#[derive(Clone, Debug)]
pub struct MachineSpec {
    pub boot_stages: Vec<Vec<u8>>,
    pub devices: Vec<DeviceSpec>,
    pub enclaves: Vec<EnclaveSpec>,
    /// (driver enclave name, device it serves). Only hypervisor-context
    /// drivers are bound to real devices.
    pub drivers: Vec<(String, DeviceId)>,
    pub tb_enclave: String,
    pub driver_allowlist: Vec<String>,
    pub golden_pcr: Digest,
    pub aik_pinning: bool,
    pub expose_tpm_to_os: bool,
    pub encls_tweak: bool,
    /// Honest boot stages the attacker replays into a TPM under his
    /// control, when a remote-quote attack is scripted.
    pub attacker_tpm_stages: Vec<Vec<u8>>,
    /// Role assignments used by chain attestation and user-app channel
    /// policy: (user app, driver, tb) enclave names.
    pub policy_roles: Option<(String, String, String)>,
}

struct DriverRuntime {
    device: Option<DeviceId>,
    index: Option<u32>,
    mode: PathMode,
    endpoint: Option<SessionEndpoint>,
    peer_app: Option<String>,
}

pub struct Machine {
    pub rng: DeterministicRng,
    pub cpu: CpuState,
    pub launch_authority: LaunchAuthority,
    pub tpm: Tpm,
    pub remote_tpm: Option<Tpm>,
    pub platform: Platform,
    pub tb_state: TbState,
    pub trace: Trace,
    step: u64,
    enclaves: BTreeMap<String, EnclaveInstance>,
    drivers: BTreeMap<String, DriverRuntime>,
    approvals: BTreeSet<String>,
    app_endpoints: BTreeMap<(String, String), SessionEndpoint>,
    session_nonces: BTreeMap<(String, String), [u8; 32]>,
    /// Frames that crossed the OS per (app, driver), for attacker replay
    /// and tamper actions.
    frames: BTreeMap<(String, String), Vec<Vec<u8>>>,
    /// Every byte the untrusted OS can observe, concatenated.
    os_visible: Vec<u8>,
    pub attacker_buffer: Vec<u8>,
    /// Labeled random payloads (user secrets, keystroke batches).
    labels: BTreeMap<String, Vec<u8>>,
    sealed_store: BTreeMap<String, Vec<u8>>,
    device_outputs: BTreeMap<DeviceId, Vec<u8>>,
    device_input_seq: BTreeMap<DeviceId, u64>,
    /// (device, seq, payload) at the source and at the app sink, for the
    /// authenticity comparison.
    pub source_events: Vec<(DeviceId, u64, Vec<u8>)>,
    pub app_received: Vec<(String, Vec<u8>)>,
    integrator: SigKeyPair,
    attacker_signer: SigKeyPair,
    spec: MachineSpec,
}

impl Machine {
    pub fn build(spec: MachineSpec, seed: u64) -> Machine {
        let mut rng = DeterministicRng::from_seed(seed);
        let launch_authority = LaunchAuthority::generate(&mut rng);
        let cpu = CpuState::new(&mut rng, launch_authority.public());
        let mut tpm = Tpm::new("local", &mut rng);
        let integrator = SigKeyPair::generate(&mut rng);
        let attacker_signer = SigKeyPair::generate(&mut rng);

        let mut machine = Machine {
            cpu,
            launch_authority,
            remote_tpm: None,
            platform: Platform::new(spec.drivers.len() as u32),
            tb_state: TbState::new(TbConfig {
                integrator_keys: vec![integrator.public()],
                driver_allowlist: Vec::new(),
                golden_pcr: spec.golden_pcr,
                aik_pinning: spec.aik_pinning,
            }),
            trace: Trace::new(),
            step: 0,
            enclaves: BTreeMap::new(),
            drivers: BTreeMap::new(),
            approvals: BTreeSet::new(),
            app_endpoints: BTreeMap::new(),
            session_nonces: BTreeMap::new(),
            frames: BTreeMap::new(),
            os_visible: Vec::new(),
            attacker_buffer: Vec::new(),
            labels: BTreeMap::new(),
            sealed_store: BTreeMap::new(),
            device_outputs: BTreeMap::new(),
            device_input_seq: BTreeMap::new(),
            source_events: Vec::new(),
            app_received: Vec::new(),
            integrator,
            attacker_signer,
            spec: spec.clone(),
            tpm: {
                tpm.reset();
                tpm
            },
            rng,
        };
        machine.boot();
        machine
    }

    fn next_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    fn record(&mut self, domain: &str, event: &str, details: Vec<(String, String)>) {
        let step = self.step;
        self.trace.push(TraceEvent {
            step,
            domain: domain.to_string(),
            event: event.to_string(),
            details,
        });
    }

    fn observe_os(&mut self, bytes: &[u8]) {
        self.os_visible.extend_from_slice(bytes);
    }

    pub fn os_visible(&self) -> &[u8] {
        &self.os_visible
    }

    pub fn device_output(&self, device: &DeviceId) -> &[u8] {
        self.device_outputs
            .get(device)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn label(&self, name: &str) -> Option<&[u8]> {
        self.labels.get(name).map(|v| v.as_slice())
    }

    pub fn set_label(&mut self, name: &str, bytes: Vec<u8>) {
        self.labels.insert(name.to_string(), bytes);
    }

    pub fn enclave(&self, name: &str) -> Option<&EnclaveInstance> {
        self.enclaves.get(name)
    }

    pub fn measurement_of(&self, name: &str) -> Option<Measurement> {
        self.enclaves.get(name).map(|e| e.identity)
    }

    /// Measured boot, platform setup, enclave launch, driver binding and
    /// capability distribution.
    fn boot(&mut self) {
        self.next_step();
        let stages = self.spec.boot_stages.clone();
        for (i, stage) in stages.iter().enumerate() {
            let m = hash(stage);
            self.tpm.extend(&m);
            self.record(
                "hypervisor",
                "boot-stage",
                vec![
                    ("index".into(), i.to_string()),
                    ("measurement".into(), m.to_hex()),
                ],
            );
        }
        let pcr = self.tpm.pcr().to_hex();
        self.record("hypervisor", "boot-complete", vec![("pcr".into(), pcr)]);
        self.tb_state.next_epoch();
        self.approvals.clear();

        for dev in self.spec.devices.clone() {
            self.platform.add_device(dev.id, dev.mmio);
        }
        if self.spec.expose_tpm_to_os {
            self.platform.grant(DomainId::VmOs, Resource::Tpm);
            self.record("hypervisor", "tpm-exposed-to-os", vec![]);
        }
        self.platform.encls_bitmap.intercept_debug = self.spec.encls_tweak;
        if self.spec.encls_tweak {
            self.record("hypervisor", "encls-tweak-enabled", vec![]);
        }

        // a measured (not verified) boot launches enclaves regardless of
        // what the PCR recorded; detection is the TB enclave's job
        for espec in self.spec.enclaves.clone() {
            let m = measure(&espec.image);
            let token = self
                .launch_authority
                .issue_token(m, espec.image.debug);
            let inst = self
                .cpu
                .launch(&espec.image, &token, m, espec.context)
                .expect("scenario enclaves measure against themselves");
            self.next_step();
            self.record(
                match espec.context {
                    HostContext::Hypervisor => "hypervisor",
                    HostContext::Os => "vm-os",
                },
                "enclave-launch",
                vec![
                    ("name".into(), espec.name.clone()),
                    ("measurement".into(), m.to_hex()),
                    ("debug".into(), espec.image.debug.to_string()),
                ],
            );
            self.enclaves.insert(espec.name, inst);
        }

        let allow: Vec<Measurement> = self
            .spec
            .driver_allowlist
            .clone()
            .iter()
            .filter_map(|n| self.measurement_of(n))
            .collect();
        self.tb_state.config.driver_allowlist = allow;

        for (index, (name, device)) in self.spec.drivers.clone().into_iter().enumerate() {
            let context = self
                .enclaves
                .get(&name)
                .map(|e| e.host_context)
                .unwrap_or(HostContext::Os);
            let bound = if context == HostContext::Hypervisor {
                self.platform
                    .bind_device(index as u32, &device)
                    .expect("scenario devices bind once");
                self.next_step();
                self.record(
                    "hypervisor",
                    "device-bound",
                    vec![
                        ("driver".into(), name.clone()),
                        ("device".into(), device.0.clone()),
                    ],
                );
                true
            } else {
                // virtualized drivers get no device and no platform index
                false
            };
            self.drivers.insert(name, DriverRuntime {
                device: bound.then(|| device.clone()),
                index: bound.then_some(index as u32),
                mode: PathMode::OsPassthrough,
                endpoint: None,
                peer_app: None,
            });
        }
    }

    fn driver_domain(&self, name: &str) -> DomainId {
        match self.drivers.get(name).and_then(|d| d.index) {
            Some(k) => DomainId::Driver(k),
            None => DomainId::VmOs,
        }
    }

    // ---- scripted actions -------------------------------------------------

    pub fn act_provision_aik(&mut self, use_attacker_integrator: bool) -> String {
        self.next_step();
        let aik = self.tpm.aik_public();
        let sig = if use_attacker_integrator {
            self.attacker_signer.sign(&aik.to_bytes())
        } else {
            self.integrator.sign(&aik.to_bytes())
        };
        let tb = self.spec.tb_enclave.clone();
        let tb_inst = self.enclaves.get(&tb).expect("tb enclave exists");
        let outcome = match provision_aik(
            &self.cpu,
            tb_inst,
            &mut self.tb_state,
            &mut self.rng,
            &aik,
            &sig,
        ) {
            Ok(blob) => {
                let blob_copy = blob.clone();
                self.observe_os(&blob_copy); // sealed blobs live on disk
                "ok".to_string()
            }
            Err(_) => "unauthorized-integrator".to_string(),
        };
        self.record(
            "tb-host",
            "provision-aik",
            vec![("outcome".into(), outcome.clone())],
        );
        outcome
    }

    /// Hypervisor attestation. `remote_quote` diverts the quote request
    /// to the attacker-controlled TPM (cuckoo attack).
    pub fn act_attest_hypervisor(&mut self, tb_name: &str, remote_quote: bool) -> String {
        self.next_step();
        if remote_quote && self.remote_tpm.is_none() {
            let mut t = Tpm::new("remote", &mut self.rng);
            for stage in &self.spec.attacker_tpm_stages {
                t.extend(&hash(stage));
            }
            self.remote_tpm = Some(t);
        }
        let tb_inst = match self.enclaves.get(tb_name) {
            Some(i) => i,
            None => return self.finish_action("tb-host", "attest-hypervisor", "unknown-enclave"),
        };
        let domain = match tb_inst.host_context {
            HostContext::Hypervisor => DomainId::TbHost,
            HostContext::Os => DomainId::VmOs,
        };
        let quote_tpm = if remote_quote {
            self.remote_tpm.as_ref().unwrap()
        } else {
            &self.tpm
        };
        let result = attest_hypervisor(
            &self.cpu,
            tb_inst,
            &mut self.tb_state,
            &self.platform,
            domain,
            &mut self.rng,
            |n| quote_tpm.quote(n),
        );
        let outcome = match result {
            Ok(()) => "ok",
            Err(AttestError::NoTpmAccess) => "no-tpm-access",
            Err(AttestError::NoPinnedAik) => "no-pinned-aik",
            Err(AttestError::BadQuote(QuoteCheck::BadOrigin)) => "bad-quote-origin",
            Err(AttestError::BadQuote(QuoteCheck::BadNonce)) => "bad-quote-nonce",
            Err(AttestError::BadQuote(QuoteCheck::BadPcr)) => "bad-quote-pcr",
            Err(AttestError::BadQuote(QuoteCheck::Ok)) => unreachable!(),
        };
        let domain_label = domain.label();
        self.finish_action(&domain_label, "attest-hypervisor", outcome)
    }

    pub fn act_approve_driver(&mut self, driver_name: &str, tb_name: &str) -> String {
        self.next_step();
        let (driver_id, tb_ctx) = match (self.enclaves.get(driver_name), self.enclaves.get(tb_name))
        {
            (Some(d), Some(t)) => (d.identity, t.host_context),
            _ => return self.finish_action("vm-os", "approve-driver", "unknown-enclave"),
        };
        let domain = self.driver_domain(driver_name);
        let channel: Option<Handle> =
            match self.platform.request_resource(domain, Resource::TbChannel) {
                Ok(h) => Some(h),
                Err(_) if tb_ctx == HostContext::Os && domain == DomainId::VmOs => {
                    // both parties live inside the attacker's VM; the
                    // attacker delivers the request himself
                    Some(Handle {
                        resource: Resource::TbChannel,
                        holder: DomainId::VmOs,
                    })
                }
                Err(_) => None,
            };
        let driver_inst = self.enclaves.get(driver_name).unwrap();
        let tb_inst = self.enclaves.get(tb_name).unwrap();
        let report = self.cpu.ereport(driver_inst, tb_inst.identity, [0u8; 32]);
        let result = approve_driver(
            &self.cpu,
            tb_inst,
            &self.tb_state,
            &report,
            channel.as_ref(),
            self.step,
        );
        let outcome = match result {
            Ok(ap) => {
                debug_assert_eq!(ap.issued_to, driver_id);
                self.approvals.insert(driver_name.to_string());
                "ok"
            }
            Err(ApproveError::ChannelDenied) => "channel-denied",
            Err(ApproveError::AttestationFailed) => "attestation-failed",
            Err(ApproveError::UnknownDriver) => "unknown-driver",
        };
        let label = domain.label();
        self.finish_action(&label, "approve-driver", outcome)
    }

    /// Attacker redirects an approval response toward a virtualized
    /// driver inside the VM; delivery needs the TB channel capability.
    pub fn act_divert_approval(&mut self, target_driver: &str) -> String {
        self.next_step();
        let outcome = match self
            .platform
            .request_resource(DomainId::VmOs, Resource::TbChannel)
        {
            Ok(_) => {
                self.approvals.insert(target_driver.to_string());
                "ok"
            }
            Err(_) => "delivery-denied",
        };
        self.finish_action("vm-os", "divert-approval", outcome)
    }

    pub fn act_open_trusted_path(
        &mut self,
        app_name: &str,
        driver_name: &str,
        confirm: bool,
    ) -> String {
        self.next_step();
        if !self.approvals.contains(driver_name) {
            return self.finish_action("vm-os", "open-trusted-path", "approval-missing");
        }
        let driver_id = match self.measurement_of(driver_name) {
            Some(m) => m,
            None => return self.finish_action("vm-os", "open-trusted-path", "unknown-enclave"),
        };
        // the app only talks to driver identities its integrator vouched
        // for; a virtualized clone of an allowlisted driver measures
        // identically and passes this check by design
        if !self.tb_state.config.driver_allowlist.contains(&driver_id) {
            return self.finish_action("vm-os", "open-trusted-path", "channel-refused");
        }
        let app_inst = self.enclaves.get(app_name).expect("app exists");
        let (key_app, msg) = key_transport_send(&self.cpu, app_inst, driver_id, &mut self.rng);
        let wire = msg.to_bytes();
        self.observe_os(&wire);
        self.record(
            "vm-os",
            "key-transport-msg",
            vec![
                ("from".into(), app_name.into()),
                ("to".into(), driver_name.into()),
                ("len".into(), wire.len().to_string()),
                // the nonce is public wire data; logging it keeps traces
                // honest about what each seed put on the bus
                ("nonce".into(), hex::encode(msg.nonce)),
            ],
        );
        let driver_inst = self.enclaves.get(driver_name).unwrap();
        let key_driver = key_transport_recv(&self.cpu, driver_inst, &msg);

        if confirm {
            let frame = key_confirm_create(&key_driver, &msg.nonce);
            self.observe_os(&frame);
            if !key_confirm_verify(&key_app, &msg.nonce, &frame) {
                return self.finish_action("vm-os", "open-trusted-path", "confirm-failed");
            }
            self.record("vm-os", "key-confirm", vec![("ok".into(), "true".into())]);
        }

        let pair = (app_name.to_string(), driver_name.to_string());
        self.app_endpoints
            .insert(pair.clone(), SessionEndpoint::new(key_app, Direction::AppToDriver));
        self.session_nonces.insert(pair.clone(), msg.nonce);
        let rt = self.drivers.get_mut(driver_name).expect("driver runtime");
        rt.endpoint = Some(SessionEndpoint::new(key_driver, Direction::DriverToApp));
        rt.peer_app = Some(app_name.to_string());
        rt.mode = PathMode::Trusted;
        self.record(
            "driver",
            "mode-switch",
            vec![
                ("driver".into(), driver_name.into()),
                ("mode".into(), "trusted".into()),
            ],
        );
        self.finish_action("vm-os", "open-trusted-path", "ok")
    }

    /// Close the session; the driver switches back to pass-through.
    pub fn act_close_trusted_path(&mut self, app_name: &str, driver_name: &str) -> String {
        self.next_step();
        let pair = (app_name.to_string(), driver_name.to_string());
        self.app_endpoints.remove(&pair);
        if let Some(rt) = self.drivers.get_mut(driver_name) {
            rt.endpoint = None;
            rt.peer_app = None;
            rt.mode = PathMode::OsPassthrough;
        }
        self.record(
            "driver",
            "mode-switch",
            vec![
                ("driver".into(), driver_name.into()),
                ("mode".into(), "os-passthrough".into()),
            ],
        );
        self.finish_action("vm-os", "close-trusted-path", "ok")
    }

    /// A device event enters the bound driver, which routes it to one of
    /// its two virtual devices depending on mode.
    pub fn act_device_input(&mut self, device: &DeviceId, payload: Vec<u8>) -> String {
        self.next_step();
        let seq = {
            let c = self.device_input_seq.entry(device.clone()).or_insert(0);
            *c += 1;
            *c
        };
        self.source_events.push((device.clone(), seq, payload.clone()));
        let driver_name = self
            .drivers
            .iter()
            .find(|(_, rt)| rt.device.as_ref() == Some(device))
            .map(|(n, _)| n.clone());
        let driver_name = match driver_name {
            Some(n) => n,
            None => {
                // unbound device: raw pass-through to the OS
                self.observe_os(&payload);
                self.record(
                    "vm-os",
                    "passthrough-io",
                    vec![("device".into(), device.0.clone())],
                );
                return "ok".into();
            }
        };
        let rt = self.drivers.get_mut(&driver_name).unwrap();
        match rt.mode {
            PathMode::OsPassthrough => {
                self.record(
                    "vm-os",
                    "vdev-a-write",
                    vec![
                        ("driver".into(), driver_name.clone()),
                        ("len".into(), payload.len().to_string()),
                    ],
                );
                self.observe_os(&payload);
                self.finish_action("vm-os", "device-input", "ok")
            }
            PathMode::Trusted => {
                let frame = rt.endpoint.as_mut().expect("trusted mode has session").send(&payload);
                let app = rt.peer_app.clone().expect("trusted mode has peer");
                self.record(
                    "vm-os",
                    "vdev-b-write",
                    vec![
                        ("driver".into(), driver_name.clone()),
                        ("len".into(), frame.len().to_string()),
                    ],
                );
                self.observe_os(&frame);
                self.frames
                    .entry((app.clone(), driver_name.clone()))
                    .or_default()
                    .push(frame.clone());
                let ep = self
                    .app_endpoints
                    .get_mut(&(app.clone(), driver_name.clone()))
                    .expect("app endpoint");
                match ep.recv(&frame) {
                    Ok(pt) => {
                        self.app_received.push((app.clone(), pt.clone()));
                        self.record(
                            "user-app",
                            "app-recv",
                            vec![
                                ("app".into(), app),
                                ("device".into(), device.0.clone()),
                                ("seq".into(), seq.to_string()),
                                ("len".into(), pt.len().to_string()),
                            ],
                        );
                        self.finish_action("user-app", "device-input", "ok")
                    }
                    Err(e) => self.finish_action("user-app", "device-input", channel_outcome(e)),
                }
            }
        }
    }

    /// App-to-driver payload over an open session. The driver forwards
    /// the plaintext to its device; a virtualized driver instead leaks it
    /// into the attacker-observable VM.
    pub fn act_app_send(&mut self, app_name: &str, driver_name: &str, payload: Vec<u8>) -> String {
        self.next_step();
        let pair = (app_name.to_string(), driver_name.to_string());
        let ep = match self.app_endpoints.get_mut(&pair) {
            Some(ep) => ep,
            None => return self.finish_action("user-app", "app-send", "no-session"),
        };
        let frame = ep.send(&payload);
        self.record(
            "vm-os",
            "vdev-b-write",
            vec![
                ("driver".into(), driver_name.into()),
                ("len".into(), frame.len().to_string()),
            ],
        );
        self.observe_os(&frame);
        let rt = self.drivers.get_mut(driver_name).expect("driver runtime");
        let result = rt.endpoint.as_mut().expect("session open").recv(&frame);
        match result {
            Ok(pt) => {
                match rt.device.clone() {
                    Some(dev) => {
                        self.device_outputs.entry(dev.clone()).or_default().extend(&pt);
                        self.record(
                            "device",
                            "device-output",
                            vec![
                                ("device".into(), dev.0),
                                ("len".into(), pt.len().to_string()),
                            ],
                        );
                    }
                    None => {
                        // virtualized driver: the "device" is the attacker
                        self.observe_os(&pt);
                        self.attacker_buffer.extend(&pt);
                        self.record(
                            "vm-os",
                            "attacker-read-plaintext",
                            vec![
                                ("driver".into(), driver_name.into()),
                                ("len".into(), pt.len().to_string()),
                            ],
                        );
                    }
                }
                self.finish_action("driver", "app-send", "ok")
            }
            Err(e) => self.finish_action("driver", "app-send", channel_outcome(e)),
        }
    }

    pub fn act_provision_user_secret(&mut self, app_name: &str, label: &str, len: usize) -> String {
        self.next_step();
        let secret = self.rng.bytes(len);
        self.labels.insert(label.to_string(), secret.clone());
        let app_inst = match self.enclaves.get(app_name) {
            Some(i) => i,
            None => return self.finish_action("user-app", "provision-user-secret", "unknown-enclave"),
        };
        let blob = seal_data(&self.cpu, app_inst, &mut self.rng, &secret);
        self.sealed_store.insert(label.to_string(), blob.clone());
        self.observe_os(&blob);
        self.finish_action("user-app", "provision-user-secret", "ok")
    }

    /// The user-verification flow: both trusted paths must be up, the
    /// sealed secret must unseal, then it is displayed via the screen
    /// driver.
    pub fn act_user_verify(
        &mut self,
        app_name: &str,
        screen_driver: &str,
        keyboard_driver: &str,
        label: &str,
    ) -> String {
        self.next_step();
        let screen_up = self
            .app_endpoints
            .contains_key(&(app_name.to_string(), screen_driver.to_string()));
        let kbd_up = self
            .app_endpoints
            .contains_key(&(app_name.to_string(), keyboard_driver.to_string()));
        if !screen_up || !kbd_up {
            return self.finish_action("user-app", "user-verify", "aborted");
        }
        let blob = match self.sealed_store.get(label) {
            Some(b) => b.clone(),
            None => return self.finish_action("user-app", "user-verify", "aborted"),
        };
        let app_inst = self.enclaves.get(app_name).expect("app exists");
        let secret = match unseal_data(&self.cpu, app_inst, &blob) {
            Ok(s) => s,
            Err(_) => return self.finish_action("user-app", "user-verify", "aborted"),
        };
        let send_outcome = self.act_app_send(app_name, screen_driver, secret);
        if send_outcome != "ok" {
            return self.finish_action("user-app", "user-verify", "aborted");
        }
        self.finish_action("user-app", "user-verify", "displayed")
    }

    /// Debug instruction issued from a domain, passing the platform's
    /// ENCLS gate before the CPU's debug-mode check.
    pub fn act_debug_access(&mut self, caller: DomainId, enclave: &str, write: bool) -> String {
        self.next_step();
        let gate = self.platform.encls_gate(caller);
        let outcome = if gate == EnclsVerdict::Intercepted {
            "intercepted"
        } else {
            match self.enclaves.get_mut(enclave) {
                None => "unknown-enclave",
                Some(inst) => {
                    let res = if write {
                        debug_write(inst, 0, b"dbg").map(|_| Vec::new())
                    } else {
                        debug_read(inst, 0, 4)
                    };
                    match res {
                        Ok(_) => "ok",
                        Err(DebugError::ProductionEnclave) => "production-enclave",
                        Err(DebugError::Intercepted) => "intercepted",
                    }
                }
            }
        };
        let label = caller.label();
        self.record(
            &label,
            "debug-access",
            vec![
                ("enclave".into(), enclave.into()),
                ("op".into(), if write { "write" } else { "read" }.into()),
                ("outcome".into(), outcome.into()),
            ],
        );
        outcome.to_string()
    }

    pub fn act_delegated_seal_key(&mut self, requester: &str, tb_name: &str) -> String {
        self.next_step();
        let (req_inst, tb_inst) = match (self.enclaves.get(requester), self.enclaves.get(tb_name)) {
            (Some(r), Some(t)) => (r, t),
            _ => return self.finish_action("tb-host", "delegated-seal-key", "unknown-enclave"),
        };
        let report = self.cpu.ereport(req_inst, tb_inst.identity, [0u8; 32]);
        let outcome = match delegated_seal_key(&self.cpu, tb_inst, &self.tb_state, &report) {
            Ok(_) => "ok",
            Err(ApproveError::AttestationFailed) => "attestation-failed",
            Err(_) => "attestation-failed",
        };
        self.finish_action("tb-host", "delegated-seal-key", outcome)
    }

    /// Full remote-verifier chain attestation against the scenario's
    /// policy roles, with arbitrary participants substituted in.
    pub fn act_chain_attest(&mut self, app: &str, driver: &str, tb: &str) -> String {
        self.next_step();
        let roles = match self.spec.policy_roles.clone() {
            Some(r) => r,
            None => return self.finish_action("remote", "chain-attest", "no-policy"),
        };
        let policy = TrustPolicy {
            user_app: self.role_expectation(&roles.0),
            driver: self.role_expectation(&roles.1),
            tb: self.role_expectation(&roles.2),
        };
        let (app_inst, driver_inst, tb_inst) = match (
            self.enclaves.get(app),
            self.enclaves.get(driver),
            self.enclaves.get(tb),
        ) {
            (Some(a), Some(d), Some(t)) => (a, d, t),
            _ => return self.finish_action("remote", "chain-attest", "unknown-enclave"),
        };
        let user_report = self.cpu.remote_report(app_inst, [0u8; 32]);
        let driver_report = self.cpu.ereport(driver_inst, app_inst.identity, [0u8; 32]);
        let tb_report = self.cpu.ereport(tb_inst, driver_inst.identity, [0u8; 32]);
        let evidence = ChainEvidence {
            user_report: &user_report,
            driver_report: &driver_report,
            tb_report: &tb_report,
            hypervisor_attested: self.tb_state.hypervisor_attested(),
        };
        let outcome = match attest_chain(
            &self.cpu,
            &self.cpu.attestation_pubkey(),
            &policy,
            app_inst,
            driver_inst,
            &evidence,
        ) {
            Ok(()) => "chain-ok".to_string(),
            Err(ChainBroken(link)) => format!("chain-broken-{}", link.name()),
        };
        self.finish_action("remote", "chain-attest", &outcome)
    }

    fn role_expectation(&self, name: &str) -> RoleExpectation {
        let inst = self.enclaves.get(name).expect("policy role enclave exists");
        RoleExpectation {
            measurement: inst.identity,
            debug: inst.debug,
        }
    }

    // ---- attacker moves ---------------------------------------------------

    pub fn act_read_vm_traffic(&mut self) -> String {
        self.next_step();
        self.attacker_buffer = self.os_visible.clone();
        let n = self.attacker_buffer.len();
        self.record(
            "vm-os",
            "attacker-read-traffic",
            vec![("bytes".into(), n.to_string())],
        );
        "ok".into()
    }

    /// Re-deliver or tamper a previously observed session frame.
    pub fn act_inject_frame(&mut self, app: &str, driver: &str, kind: &str) -> String {
        self.next_step();
        let pair = (app.to_string(), driver.to_string());
        let frames = self.frames.get(&pair).cloned().unwrap_or_default();
        let frame = match kind {
            "replay-first" => frames.first().cloned(),
            "tamper-last" => frames.last().cloned().map(|mut f| {
                // forge a fresh counter so replay detection does not mask
                // the authentication failure
                let mut counter = u64::from_be_bytes(f[8..16].try_into().unwrap());
                counter += 1000;
                f[8..16].copy_from_slice(&counter.to_be_bytes());
                let last = f.len() - 1;
                f[last] ^= 0x01;
                f
            }),
            _ => None,
        };
        let frame = match frame {
            Some(f) => f,
            None => return self.finish_action("vm-os", "inject-frame", "no-frame"),
        };
        let outcome = match self.app_endpoints.get_mut(&pair) {
            None => "no-session".to_string(),
            Some(ep) => match ep.recv(&frame) {
                Ok(_) => "accepted".to_string(),
                Err(e) => channel_outcome(e).to_string(),
            },
        };
        self.finish_action("vm-os", "inject-frame", &outcome)
    }

    pub fn act_spoof_interrupt(&mut self, claimed: &DeviceId, actual: &DeviceId) -> String {
        self.next_step();
        let v = self.platform.route_interrupt(claimed, actual);
        let outcome = match v {
            InterruptVerdict::Deliver => "deliver",
            InterruptVerdict::Drop => "drop",
        };
        self.record(
            "vm-os",
            "spoof-interrupt",
            vec![
                ("claimed".into(), claimed.0.clone()),
                ("actual".into(), actual.0.clone()),
                ("outcome".into(), outcome.into()),
            ],
        );
        outcome.into()
    }

    pub fn act_claim_mmio(&mut self, device: &DeviceId, base: u64, limit: u64) -> String {
        self.next_step();
        let v = self.platform.claim_mmio(
            MmioClaim {
                device: device.clone(),
                range: MmioRange { base, limit },
            },
            DomainId::VmOs,
        );
        let outcome = match v {
            ClaimVerdict::Accept => "accept",
            ClaimVerdict::Reject => "reject",
        };
        self.record(
            "vm-os",
            "claim-mmio",
            vec![
                ("device".into(), device.0.clone()),
                ("outcome".into(), outcome.into()),
            ],
        );
        outcome.into()
    }

    pub fn act_dma_request(&mut self, device: &DeviceId, target: MemRegion) -> String {
        self.next_step();
        let v = self.platform.dma_request(device, target);
        let outcome = match v {
            DmaVerdict::Allow => "allow",
            DmaVerdict::Deny => "deny",
        };
        self.record(
            "vm-os",
            "dma-request",
            vec![
                ("device".into(), device.0.clone()),
                ("target".into(), format!("{target:?}")),
                ("outcome".into(), outcome.into()),
            ],
        );
        outcome.into()
    }

    pub fn act_request_resource(&mut self, requester: DomainId, resource: Resource) -> String {
        self.next_step();
        let outcome = match self.platform.request_resource(requester, resource.clone()) {
            Ok(_) => "ok",
            Err(_) => "access-denied",
        };
        let label = requester.label();
        self.record(
            &label,
            "request-resource",
            vec![
                ("resource".into(), resource.label()),
                ("outcome".into(), outcome.into()),
            ],
        );
        outcome.into()
    }

    fn finish_action(&mut self, domain: &str, event: &str, outcome: &str) -> String {
        self.record(domain, event, vec![("outcome".into(), outcome.into())]);
        outcome.to_string()
    }
}

fn channel_outcome(e: ChannelError) -> &'static str {
    match e {
        ChannelError::AuthFailure => "auth-failure",
        ChannelError::ReplayDetected => "replay-detected",
        ChannelError::Malformed => "malformed",
    }
}
