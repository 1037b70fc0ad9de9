//! Scenario files: a TOML description of one machine plus a script of
//! actions (honest protocol steps and attacker moves) and a list of
//! expectations evaluated against the trace afterwards.
//!
//! Expected action outcomes can be conditioned on the runtime toggles
//! (`expect_pinning_off`, `expect_tpm_exposed`, `expect_tweak_off`), so a
//! single file states both the defense-on and defense-off verdicts.

use std::fmt;

use serde::Deserialize;

use crate::crypto::Digest;
use crate::enclave::{EnclaveImage, HostContext};
use crate::machine::{DeviceSpec, EnclaveSpec, Machine, MachineSpec};
use crate::platform::{DeviceId, DomainId, MemRegion, MmioRange, Resource};
use crate::trace::windows_absent;

#[derive(Debug)]
pub enum ScenarioError {
    /// Bad file / unparseable or inconsistent config -> exit code 2.
    Config(String),
    /// The machine ran but an expectation failed -> exit code 1.
    Expectation(Vec<String>),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Config(m) => write!(f, "config error: {m}"),
            ScenarioError::Expectation(fails) => {
                writeln!(f, "{} expectation(s) failed:", fails.len())?;
                for m in fails {
                    writeln!(f, "  - {m}")?;
                }
                Ok(())
            }
        }
    }
}

/// Runtime toggles, set from CLI flags; each weakens one defense.
#[derive(Clone, Copy, Debug, Default)]
pub struct Toggles {
    pub no_aik_pinning: bool,
    pub expose_tpm_to_os: bool,
    pub disable_debug_tweak: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub platform: PlatformSection,
    pub boot: BootSection,
    pub tb: TbSection,
    #[serde(default)]
    pub enclaves: Vec<EnclaveSection>,
    #[serde(default)]
    pub drivers: Vec<DriverSection>,
    #[serde(default)]
    pub devices: Vec<DeviceSection>,
    pub policy: Option<PolicySection>,
    #[serde(default)]
    pub attacker: AttackerSection,
    #[serde(default)]
    actions: Vec<toml::Value>,
    #[serde(default)]
    expectations: Vec<toml::Value>,
}

impl ScenarioConfig {
    /// The action script, with per-action expected outcomes split out.
    pub fn action_entries(&self) -> Result<Vec<ActionEntry>, ScenarioError> {
        self.actions
            .iter()
            .enumerate()
            .map(|(i, v)| ActionEntry::from_value(v).map_err(|e| {
                ScenarioError::Config(format!("actions[{i}]: {e}"))
            }))
            .collect()
    }

    pub fn expectation_entries(&self) -> Result<Vec<ExpectationEntry>, ScenarioError> {
        self.expectations
            .iter()
            .enumerate()
            .map(|(i, v)| ExpectationEntry::from_value(v).map_err(|e| {
                ScenarioError::Config(format!("expectations[{i}]: {e}"))
            }))
            .collect()
    }
}

/// Remove `keys` from a TOML table value, returning their values and the
/// remainder for enum deserialization.
fn split_keys(
    value: &toml::Value,
    keys: &[&str],
) -> Result<(Vec<Option<toml::Value>>, toml::Value), String> {
    let mut table = value
        .as_table()
        .ok_or_else(|| "expected a table".to_string())?
        .clone();
    let taken = keys.iter().map(|k| table.remove(*k)).collect();
    Ok((taken, toml::Value::Table(table)))
}

fn opt_string(v: Option<toml::Value>, key: &str) -> Result<Option<String>, String> {
    match v {
        None => Ok(None),
        Some(toml::Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(format!("'{key}' must be a string")),
    }
}

fn opt_bool(v: Option<toml::Value>, key: &str) -> Result<Option<bool>, String> {
    match v {
        None => Ok(None),
        Some(toml::Value::Boolean(b)) => Ok(Some(b)),
        Some(_) => Err(format!("'{key}' must be a boolean")),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformSection {
    #[serde(default = "default_true")]
    pub aik_pinning: bool,
    #[serde(default)]
    pub expose_tpm_to_os: bool,
    #[serde(default)]
    pub encls_tweak: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootSection {
    /// Hex-encoded stage blobs hashed into the PCR in order.
    pub stages: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TbSection {
    pub enclave: String,
    /// Reference PCR after an honest boot, hex. Generate with the
    /// `golden-pcr` subcommand; never write by hand.
    pub golden_pcr: String,
    #[serde(default)]
    pub driver_allowlist: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnclaveSection {
    pub name: String,
    /// Hex-encoded memory pages, measured in order.
    pub pages: Vec<String>,
    #[serde(default)]
    pub debug: bool,
    /// "hypervisor" or "vm-os".
    pub context: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSection {
    pub enclave: String,
    pub device: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub id: String,
    pub mmio: Option<[u64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub user_app: String,
    pub driver: String,
    pub tb: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSection {
    /// Stage blobs (hex) the attacker replays into a TPM he controls.
    #[serde(default)]
    pub remote_tpm_stages: Vec<String>,
}

#[derive(Debug)]
pub struct ActionEntry {
    pub action: Action,
    /// Expected outcome with all defenses in their configured state.
    pub expect: Option<String>,
    /// Overrides when the matching CLI toggle flips a defense off.
    pub expect_pinning_off: Option<String>,
    pub expect_tpm_exposed: Option<String>,
    pub expect_tweak_off: Option<String>,
}

impl ActionEntry {
    fn from_value(value: &toml::Value) -> Result<ActionEntry, String> {
        let (taken, rest) = split_keys(
            value,
            &[
                "expect",
                "expect_pinning_off",
                "expect_tpm_exposed",
                "expect_tweak_off",
            ],
        )?;
        let mut it = taken.into_iter();
        let expect = opt_string(it.next().unwrap(), "expect")?;
        let expect_pinning_off = opt_string(it.next().unwrap(), "expect_pinning_off")?;
        let expect_tpm_exposed = opt_string(it.next().unwrap(), "expect_tpm_exposed")?;
        let expect_tweak_off = opt_string(it.next().unwrap(), "expect_tweak_off")?;
        let action: Action = rest.try_into().map_err(|e| e.to_string())?;
        Ok(ActionEntry {
            action,
            expect,
            expect_pinning_off,
            expect_tpm_exposed,
            expect_tweak_off,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "do", rename_all = "kebab-case")]
pub enum Action {
    ProvisionAik {
        #[serde(default)]
        attacker_integrator: bool,
    },
    AttestHypervisor {
        tb: String,
        #[serde(default)]
        quote_source: Option<String>,
    },
    ApproveDriver {
        driver: String,
        tb: String,
    },
    DivertApproval {
        driver: String,
    },
    OpenTrustedPath {
        app: String,
        driver: String,
        #[serde(default)]
        confirm: bool,
    },
    CloseTrustedPath {
        app: String,
        driver: String,
    },
    DeviceInput {
        device: String,
        data: Option<String>,
        random_len: Option<usize>,
        label: Option<String>,
    },
    AppSend {
        app: String,
        driver: String,
        data: Option<String>,
        label: Option<String>,
    },
    ProvisionUserSecret {
        app: String,
        label: String,
        len: usize,
    },
    UserVerify {
        app: String,
        screen_driver: String,
        keyboard_driver: String,
        label: String,
    },
    DebugAccess {
        caller: String,
        enclave: String,
        #[serde(default)]
        write: bool,
    },
    DelegatedSealKey {
        requester: String,
        tb: String,
    },
    ChainAttest {
        app: String,
        driver: String,
        tb: String,
    },
    ReadVmTraffic,
    InjectFrame {
        app: String,
        driver: String,
        kind: String,
    },
    SpoofInterrupt {
        claimed: String,
        actual: String,
    },
    ClaimMmio {
        device: String,
        base: u64,
        limit: u64,
    },
    DmaRequest {
        device: String,
        target: String,
    },
    RequestResource {
        requester: String,
        resource: String,
    },
}

#[derive(Debug)]
pub struct ExpectationEntry {
    pub name: String,
    pub check: Check,
    /// Optional guards: the check only applies when the effective toggle
    /// value matches.
    pub when_aik_pinning: Option<bool>,
    pub when_tpm_exposed: Option<bool>,
    pub when_encls_tweak: Option<bool>,
}

impl ExpectationEntry {
    fn from_value(value: &toml::Value) -> Result<ExpectationEntry, String> {
        let (taken, rest) = split_keys(
            value,
            &[
                "name",
                "when_aik_pinning",
                "when_tpm_exposed",
                "when_encls_tweak",
            ],
        )?;
        let mut it = taken.into_iter();
        let name = opt_string(it.next().unwrap(), "name")?
            .ok_or_else(|| "expectation needs a 'name'".to_string())?;
        let when_aik_pinning = opt_bool(it.next().unwrap(), "when_aik_pinning")?;
        let when_tpm_exposed = opt_bool(it.next().unwrap(), "when_tpm_exposed")?;
        let when_encls_tweak = opt_bool(it.next().unwrap(), "when_encls_tweak")?;
        let check: Check = rest.try_into().map_err(|e| e.to_string())?;
        Ok(ExpectationEntry {
            name,
            check,
            when_aik_pinning,
            when_tpm_exposed,
            when_encls_tweak,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
pub enum Check {
    EventCount {
        event: String,
        domain: Option<String>,
        count: usize,
    },
    EventPresent {
        event: String,
        domain: Option<String>,
    },
    EventAbsent {
        event: String,
        domain: Option<String>,
    },
    Ordering {
        events: Vec<String>,
    },
    /// No `window`-byte substring of the labeled secret appears in the
    /// OS-visible byte stream.
    SecretHiddenFromOs {
        label: String,
        #[serde(default = "default_window")]
        window: usize,
    },
    /// The labeled secret appears in the given device's output exactly
    /// `count` times.
    DeviceOutputContains {
        device: String,
        label: String,
        count: usize,
    },
    /// Every app-received payload matches a device source event.
    ReceivedMatchesSource,
}

fn default_window() -> usize {
    4
}

pub struct RunResult {
    pub machine: Machine,
    pub failures: Vec<String>,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))
}

fn hex_bytes(field: &str, s: &str) -> Result<Vec<u8>, ScenarioError> {
    hex::decode(s).map_err(|e| ScenarioError::Config(format!("{field}: bad hex: {e}")))
}

fn parse_context(s: &str) -> Result<HostContext, ScenarioError> {
    match s {
        "hypervisor" => Ok(HostContext::Hypervisor),
        "vm-os" => Ok(HostContext::Os),
        other => Err(ScenarioError::Config(format!(
            "unknown enclave context '{other}'"
        ))),
    }
}

fn build_spec(cfg: &ScenarioConfig, toggles: Toggles) -> Result<MachineSpec, ScenarioError> {
    let mut boot_stages = Vec::new();
    for (i, s) in cfg.boot.stages.iter().enumerate() {
        boot_stages.push(hex_bytes(&format!("boot.stages[{i}]"), s)?);
    }
    let golden_pcr = Digest::from_hex(&cfg.tb.golden_pcr)
        .ok_or_else(|| ScenarioError::Config("tb.golden_pcr: bad hex digest".into()))?;

    let mut enclaves = Vec::new();
    let mut names = std::collections::BTreeSet::new();
    for e in &cfg.enclaves {
        if !names.insert(e.name.clone()) {
            return Err(ScenarioError::Config(format!(
                "duplicate enclave name '{}'",
                e.name
            )));
        }
        let mut pages = Vec::new();
        for (i, p) in e.pages.iter().enumerate() {
            pages.push(hex_bytes(&format!("enclave {} page {i}", e.name), p)?);
        }
        enclaves.push(EnclaveSpec {
            name: e.name.clone(),
            image: EnclaveImage {
                pages,
                debug: e.debug,
            },
            context: parse_context(&e.context)?,
        });
    }
    let known = |n: &str| names.contains(n);
    if !known(&cfg.tb.enclave) {
        return Err(ScenarioError::Config(format!(
            "tb.enclave '{}' not declared",
            cfg.tb.enclave
        )));
    }
    for n in &cfg.tb.driver_allowlist {
        if !known(n) {
            return Err(ScenarioError::Config(format!(
                "allowlisted driver '{n}' not declared"
            )));
        }
    }
    let device_ids: std::collections::BTreeSet<&str> =
        cfg.devices.iter().map(|d| d.id.as_str()).collect();
    for d in &cfg.drivers {
        if !known(&d.enclave) {
            return Err(ScenarioError::Config(format!(
                "driver enclave '{}' not declared",
                d.enclave
            )));
        }
        if !device_ids.contains(d.device.as_str()) {
            return Err(ScenarioError::Config(format!(
                "driver device '{}' not declared",
                d.device
            )));
        }
    }
    if let Some(p) = &cfg.policy {
        for n in [&p.user_app, &p.driver, &p.tb] {
            if !known(n) {
                return Err(ScenarioError::Config(format!(
                    "policy enclave '{n}' not declared"
                )));
            }
        }
    }

    let mut attacker_tpm_stages = Vec::new();
    for (i, s) in cfg.attacker.remote_tpm_stages.iter().enumerate() {
        attacker_tpm_stages.push(hex_bytes(&format!("attacker.remote_tpm_stages[{i}]"), s)?);
    }

    Ok(MachineSpec {
        boot_stages,
        devices: cfg
            .devices
            .iter()
            .map(|d| DeviceSpec {
                id: DeviceId(d.id.clone()),
                mmio: d.mmio.map(|[base, limit]| MmioRange { base, limit }),
            })
            .collect(),
        enclaves,
        drivers: cfg
            .drivers
            .iter()
            .map(|d| (d.enclave.clone(), DeviceId(d.device.clone())))
            .collect(),
        tb_enclave: cfg.tb.enclave.clone(),
        driver_allowlist: cfg.tb.driver_allowlist.clone(),
        golden_pcr,
        aik_pinning: cfg.platform.aik_pinning && !toggles.no_aik_pinning,
        expose_tpm_to_os: cfg.platform.expose_tpm_to_os || toggles.expose_tpm_to_os,
        encls_tweak: cfg.platform.encls_tweak && !toggles.disable_debug_tweak,
        attacker_tpm_stages,
        policy_roles: cfg
            .policy
            .as_ref()
            .map(|p| (p.user_app.clone(), p.driver.clone(), p.tb.clone())),
    })
}

fn parse_domain(s: &str) -> Result<DomainId, ScenarioError> {
    match s {
        "vm-os" => Ok(DomainId::VmOs),
        "hypervisor" => Ok(DomainId::Hypervisor),
        "tb-host" => Ok(DomainId::TbHost),
        other => match other.strip_prefix("driver-").and_then(|k| k.parse().ok()) {
            Some(k) => Ok(DomainId::Driver(k)),
            None => Err(ScenarioError::Config(format!("unknown domain '{other}'"))),
        },
    }
}

fn parse_region(s: &str) -> Result<MemRegion, ScenarioError> {
    match s {
        "vm-os" => Ok(MemRegion::VmOs),
        "trusted-stack" => Ok(MemRegion::TrustedStack),
        "enclave" => Ok(MemRegion::EnclavePrivate),
        other => match other.strip_prefix("driver-heap-").and_then(|k| k.parse().ok()) {
            Some(k) => Ok(MemRegion::DriverHeap(k)),
            None => Err(ScenarioError::Config(format!(
                "unknown memory region '{other}'"
            ))),
        },
    }
}

fn parse_resource(s: &str) -> Result<Resource, ScenarioError> {
    match s {
        "tpm" => Ok(Resource::Tpm),
        "tb-channel" => Ok(Resource::TbChannel),
        other => Err(ScenarioError::Config(format!("unknown resource '{other}'"))),
    }
}

/// Payload for data-carrying actions: fixed hex, or a fresh random blob
/// stored under `label` for later secrecy checks.
fn action_payload(
    machine: &mut Machine,
    data: &Option<String>,
    random_len: Option<usize>,
    label: &Option<String>,
) -> Result<Vec<u8>, ScenarioError> {
    let payload = match (data, random_len, label) {
        (Some(hexstr), _, _) => hex_bytes("action data", hexstr)?,
        (None, Some(len), _) => machine.rng.bytes(len),
        (None, None, Some(l)) => machine
            .label(l)
            .map(|b| b.to_vec())
            .ok_or_else(|| ScenarioError::Config(format!("label '{l}' not defined yet")))?,
        (None, None, None) => {
            return Err(ScenarioError::Config(
                "action needs data, random_len, or label".into(),
            ))
        }
    };
    if let (Some(l), true) = (label, random_len.is_some() || data.is_some()) {
        machine.set_label(l, payload.clone());
    }
    Ok(payload)
}

fn run_action(machine: &mut Machine, action: &Action) -> Result<String, ScenarioError> {
    Ok(match action {
        Action::ProvisionAik {
            attacker_integrator,
        } => machine.act_provision_aik(*attacker_integrator),
        Action::AttestHypervisor { tb, quote_source } => {
            let remote = match quote_source.as_deref() {
                None | Some("local") => false,
                Some("remote") => true,
                Some(other) => {
                    return Err(ScenarioError::Config(format!(
                        "unknown quote_source '{other}'"
                    )))
                }
            };
            machine.act_attest_hypervisor(tb, remote)
        }
        Action::ApproveDriver { driver, tb } => machine.act_approve_driver(driver, tb),
        Action::DivertApproval { driver } => machine.act_divert_approval(driver),
        Action::OpenTrustedPath {
            app,
            driver,
            confirm,
        } => machine.act_open_trusted_path(app, driver, *confirm),
        Action::CloseTrustedPath { app, driver } => machine.act_close_trusted_path(app, driver),
        Action::DeviceInput {
            device,
            data,
            random_len,
            label,
        } => {
            let payload = action_payload(machine, data, *random_len, label)?;
            machine.act_device_input(&DeviceId(device.clone()), payload)
        }
        Action::AppSend {
            app,
            driver,
            data,
            label,
        } => {
            let payload = action_payload(machine, data, None, label)?;
            machine.act_app_send(app, driver, payload)
        }
        Action::ProvisionUserSecret { app, label, len } => {
            machine.act_provision_user_secret(app, label, *len)
        }
        Action::UserVerify {
            app,
            screen_driver,
            keyboard_driver,
            label,
        } => machine.act_user_verify(app, screen_driver, keyboard_driver, label),
        Action::DebugAccess {
            caller,
            enclave,
            write,
        } => {
            let caller = parse_domain(caller)?;
            machine.act_debug_access(caller, enclave, *write)
        }
        Action::DelegatedSealKey { requester, tb } => machine.act_delegated_seal_key(requester, tb),
        Action::ChainAttest { app, driver, tb } => machine.act_chain_attest(app, driver, tb),
        Action::ReadVmTraffic => machine.act_read_vm_traffic(),
        Action::InjectFrame { app, driver, kind } => machine.act_inject_frame(app, driver, kind),
        Action::SpoofInterrupt { claimed, actual } => {
            machine.act_spoof_interrupt(&DeviceId(claimed.clone()), &DeviceId(actual.clone()))
        }
        Action::ClaimMmio {
            device,
            base,
            limit,
        } => machine.act_claim_mmio(&DeviceId(device.clone()), *base, *limit),
        Action::DmaRequest { device, target } => {
            let region = parse_region(target)?;
            machine.act_dma_request(&DeviceId(device.clone()), region)
        }
        Action::RequestResource {
            requester,
            resource,
        } => {
            let requester = parse_domain(requester)?;
            let resource = parse_resource(resource)?;
            machine.act_request_resource(requester, resource)
        }
    })
}

fn expected_outcome<'a>(
    entry: &'a ActionEntry,
    spec: &MachineSpec,
    cfg: &ScenarioConfig,
) -> Option<&'a str> {
    // a toggle override applies when the effective state differs from the
    // file's configured state (i.e. the CLI weakened the defense)
    if let Some(e) = &entry.expect_pinning_off {
        if !spec.aik_pinning && cfg.platform.aik_pinning {
            return Some(e);
        }
    }
    if let Some(e) = &entry.expect_tpm_exposed {
        if spec.expose_tpm_to_os && !cfg.platform.expose_tpm_to_os {
            return Some(e);
        }
    }
    if let Some(e) = &entry.expect_tweak_off {
        if !spec.encls_tweak && cfg.platform.encls_tweak {
            return Some(e);
        }
    }
    entry.expect.as_deref()
}

fn check_applies(entry: &ExpectationEntry, spec: &MachineSpec) -> bool {
    entry.when_aik_pinning.map_or(true, |v| spec.aik_pinning == v)
        && entry
            .when_tpm_exposed
            .map_or(true, |v| spec.expose_tpm_to_os == v)
        && entry.when_encls_tweak.map_or(true, |v| spec.encls_tweak == v)
}

fn eval_check(machine: &Machine, entry: &ExpectationEntry) -> Result<Option<String>, ScenarioError> {
    let fail = |msg: String| Ok(Some(format!("{}: {}", entry.name, msg)));
    match &entry.check {
        Check::EventCount {
            event,
            domain,
            count,
        } => {
            let got = machine.trace.count(event, domain.as_deref());
            if got != *count {
                return fail(format!("expected {count} '{event}' events, saw {got}"));
            }
        }
        Check::EventPresent { event, domain } => {
            if machine.trace.count(event, domain.as_deref()) == 0 {
                return fail(format!("expected at least one '{event}' event"));
            }
        }
        Check::EventAbsent { event, domain } => {
            let got = machine.trace.count(event, domain.as_deref());
            if got != 0 {
                return fail(format!("expected no '{event}' events, saw {got}"));
            }
        }
        Check::Ordering { events } => {
            let names: Vec<&str> = events.iter().map(|s| s.as_str()).collect();
            if !machine.trace.ordered(&names) {
                return fail(format!("events not in order: {}", events.join(" -> ")));
            }
        }
        Check::SecretHiddenFromOs { label, window } => {
            let secret = machine
                .label(label)
                .ok_or_else(|| ScenarioError::Config(format!("label '{label}' never defined")))?
                .to_vec();
            if !windows_absent(machine.os_visible(), &secret, *window) {
                return fail(format!(
                    "a {window}-byte window of secret '{label}' appeared in OS-visible bytes"
                ));
            }
        }
        Check::DeviceOutputContains {
            device,
            label,
            count,
        } => {
            let secret = machine
                .label(label)
                .ok_or_else(|| ScenarioError::Config(format!("label '{label}' never defined")))?
                .to_vec();
            let out = machine.device_output(&DeviceId(device.clone()));
            let got = if secret.is_empty() {
                0
            } else {
                out.windows(secret.len()).filter(|w| *w == &secret[..]).count()
            };
            if got != *count {
                return fail(format!(
                    "secret '{label}' appears {got} times on device '{device}', expected {count}"
                ));
            }
        }
        Check::ReceivedMatchesSource => {
            for (app, payload) in &machine.app_received {
                let ok = machine
                    .source_events
                    .iter()
                    .any(|(_, _, src)| src == payload);
                if !ok {
                    return fail(format!(
                        "app '{app}' accepted a payload no device produced"
                    ));
                }
            }
        }
    }
    Ok(None)
}

/// Build the machine a scenario describes without running its script,
/// for tests that want to drive the machine directly.
pub fn build_machine(
    cfg: &ScenarioConfig,
    toggles: Toggles,
    seed: u64,
) -> Result<Machine, ScenarioError> {
    let spec = build_spec(cfg, toggles)?;
    Ok(Machine::build(spec, seed))
}

/// Parse, build, script, and check one scenario. `Err(Config)` for bad
/// input, `Ok` with recorded failures otherwise.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    toggles: Toggles,
    seed: u64,
) -> Result<RunResult, ScenarioError> {
    let spec = build_spec(cfg, toggles)?;
    let actions = cfg.action_entries()?;
    let expectations = cfg.expectation_entries()?;
    let mut machine = Machine::build(spec.clone(), seed);
    let mut failures = Vec::new();

    for (i, entry) in actions.iter().enumerate() {
        let outcome = run_action(&mut machine, &entry.action)?;
        if let Some(expected) = expected_outcome(entry, &spec, cfg) {
            if outcome != expected {
                failures.push(format!(
                    "action {i} ({:?}): expected outcome '{expected}', got '{outcome}'",
                    action_name(&entry.action)
                ));
            }
        }
    }

    for entry in &expectations {
        if !check_applies(entry, &spec) {
            continue;
        }
        if let Some(msg) = eval_check(&machine, entry)? {
            failures.push(msg);
        }
    }

    Ok(RunResult { machine, failures })
}

fn action_name(a: &Action) -> &'static str {
    match a {
        Action::ProvisionAik { .. } => "provision-aik",
        Action::AttestHypervisor { .. } => "attest-hypervisor",
        Action::ApproveDriver { .. } => "approve-driver",
        Action::DivertApproval { .. } => "divert-approval",
        Action::OpenTrustedPath { .. } => "open-trusted-path",
        Action::CloseTrustedPath { .. } => "close-trusted-path",
        Action::DeviceInput { .. } => "device-input",
        Action::AppSend { .. } => "app-send",
        Action::ProvisionUserSecret { .. } => "provision-user-secret",
        Action::UserVerify { .. } => "user-verify",
        Action::DebugAccess { .. } => "debug-access",
        Action::DelegatedSealKey { .. } => "delegated-seal-key",
        Action::ChainAttest { .. } => "chain-attest",
        Action::ReadVmTraffic => "read-vm-traffic",
        Action::InjectFrame { .. } => "inject-frame",
        Action::SpoofInterrupt { .. } => "spoof-interrupt",
        Action::ClaimMmio { .. } => "claim-mmio",
        Action::DmaRequest { .. } => "dma-request",
        Action::RequestResource { .. } => "request-resource",
    }
}
