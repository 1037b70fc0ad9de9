//! Trusted hypervisor model: capability-partitioned resources, exclusive
//! device binding, DMA and MMIO policing, interrupt routing, and the
//! ENCLS instruction gate for the debug tweak.

use std::collections::{BTreeMap, BTreeSet};

/// Execution domains. Every component runs under exactly one of these.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum DomainId {
    Hypervisor,
    Driver(u32),
    VmOs,
    TbHost,
}

impl DomainId {
    pub fn label(&self) -> String {
        match self {
            DomainId::Hypervisor => "hypervisor".into(),
            DomainId::Driver(k) => format!("driver-{k}"),
            DomainId::VmOs => "vm-os".into(),
            DomainId::TbHost => "tb-host".into(),
        }
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct DeviceId(pub String);

impl DeviceId {
    pub fn new(s: &str) -> Self {
        DeviceId(s.to_string())
    }
}

/// Abstract memory regions; one owner each, pairwise disjoint.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum MemRegion {
    VmOs,
    TrustedStack,
    DriverHeap(u32),
    EnclavePrivate,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Resource {
    Memory(MemRegion),
    Device(DeviceId),
    Tpm,
    TbChannel,
}

impl Resource {
    pub fn label(&self) -> String {
        match self {
            Resource::Memory(r) => format!("memory:{r:?}"),
            Resource::Device(d) => format!("device:{}", d.0),
            Resource::Tpm => "tpm".into(),
            Resource::TbChannel => "tb-channel".into(),
        }
    }
}

/// Grant handle returned by a successful resource request.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Handle {
    pub resource: Resource,
    pub holder: DomainId,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct EnclsBitmap {
    pub intercept_debug: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct MmioRange {
    pub base: u64,
    pub limit: u64,
}

impl MmioRange {
    pub fn overlaps(&self, other: &MmioRange) -> bool {
        self.base < other.limit && other.base < self.limit
    }
}

/// OS-issued device address-range configuration.
#[derive(Clone, Debug)]
pub struct MmioClaim {
    pub device: DeviceId,
    pub range: MmioRange,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindError {
    #[error("device already bound to a driver")]
    AlreadyBound,
    #[error("unknown device")]
    UnknownDevice,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("access denied: {requester:?} does not hold {resource:?}")]
pub struct AccessDenied {
    pub requester: DomainId,
    pub resource: Resource,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DmaVerdict {
    Allow,
    Deny,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ClaimVerdict {
    Accept,
    Reject,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InterruptVerdict {
    Deliver,
    Drop,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EnclsVerdict {
    PassThrough,
    Intercepted,
}

struct DeviceEntry {
    mmio: Option<MmioRange>,
    bound_to: Option<u32>,
}

/// Capability-partitioned platform state. The hypervisor implicitly holds
/// every resource; all other holders are explicit grants.
pub struct Platform {
    devices: BTreeMap<DeviceId, DeviceEntry>,
    grants: BTreeSet<(DomainId, Resource)>,
    claims: Vec<MmioClaim>,
    pub encls_bitmap: EnclsBitmap,
}

impl Platform {
    /// Default-deny platform: the VM gets its own memory; drivers and the
    /// TB host get theirs. Everything else is granted explicitly.
    pub fn new(driver_count: u32) -> Self {
        let mut grants = BTreeSet::new();
        grants.insert((DomainId::VmOs, Resource::Memory(MemRegion::VmOs)));
        grants.insert((DomainId::TbHost, Resource::Memory(MemRegion::TrustedStack)));
        grants.insert((DomainId::TbHost, Resource::Tpm));
        for k in 0..driver_count {
            grants.insert((DomainId::Driver(k), Resource::Memory(MemRegion::DriverHeap(k))));
            grants.insert((DomainId::Driver(k), Resource::TbChannel));
        }
        Platform {
            devices: BTreeMap::new(),
            grants,
            claims: Vec::new(),
            encls_bitmap: EnclsBitmap::default(),
        }
    }

    pub fn add_device(&mut self, id: DeviceId, mmio: Option<MmioRange>) {
        self.devices.insert(id.clone(), DeviceEntry {
            mmio,
            bound_to: None,
        });
        // unbound devices pass through to the VM
        self.grants.insert((DomainId::VmOs, Resource::Device(id)));
    }

    /// Extra grant, used by scenario toggles such as exposing the TPM to
    /// the untrusted OS.
    pub fn grant(&mut self, holder: DomainId, resource: Resource) {
        self.grants.insert((holder, resource));
    }

    pub fn revoke(&mut self, holder: DomainId, resource: &Resource) {
        self.grants.remove(&(holder, resource.clone()));
    }

    /// Exclusive binding of a user device to a driver; the VM loses its
    /// pass-through access.
    pub fn bind_device(&mut self, driver: u32, device: &DeviceId) -> Result<Handle, BindError> {
        let entry = self.devices.get_mut(device).ok_or(BindError::UnknownDevice)?;
        if entry.bound_to.is_some() {
            return Err(BindError::AlreadyBound);
        }
        entry.bound_to = Some(driver);
        self.grants.remove(&(DomainId::VmOs, Resource::Device(device.clone())));
        self.grants
            .insert((DomainId::Driver(driver), Resource::Device(device.clone())));
        Ok(Handle {
            resource: Resource::Device(device.clone()),
            holder: DomainId::Driver(driver),
        })
    }

    pub fn bound_driver(&self, device: &DeviceId) -> Option<u32> {
        self.devices.get(device).and_then(|d| d.bound_to)
    }

    /// Mediated resource access; the single entry point for cross-domain
    /// resource use.
    pub fn request_resource(
        &self,
        requester: DomainId,
        resource: Resource,
    ) -> Result<Handle, AccessDenied> {
        if requester == DomainId::Hypervisor || self.grants.contains(&(requester, resource.clone()))
        {
            Ok(Handle {
                resource,
                holder: requester,
            })
        } else {
            Err(AccessDenied {
                requester,
                resource,
            })
        }
    }

    /// IOMMU check: device DMA may only touch VM-owned memory. Trusted
    /// stack and enclave memory are off-limits.
    pub fn dma_request(&self, _device: &DeviceId, target: MemRegion) -> DmaVerdict {
        match target {
            MemRegion::VmOs => DmaVerdict::Allow,
            MemRegion::TrustedStack | MemRegion::DriverHeap(_) | MemRegion::EnclavePrivate => {
                DmaVerdict::Deny
            }
        }
    }

    /// Reject OS device configurations whose address range overlaps a
    /// bound user device.
    pub fn claim_mmio(&mut self, claim: MmioClaim, issuer: DomainId) -> ClaimVerdict {
        if issuer == DomainId::VmOs {
            for (id, entry) in &self.devices {
                if entry.bound_to.is_some() && *id != claim.device {
                    if let Some(range) = entry.mmio {
                        if range.overlaps(&claim.range) {
                            return ClaimVerdict::Reject;
                        }
                    }
                }
            }
        }
        self.claims.push(claim);
        ClaimVerdict::Accept
    }

    /// Drop interrupts forged on behalf of a bound user device.
    pub fn route_interrupt(
        &self,
        claimed_source: &DeviceId,
        actual_source: &DeviceId,
    ) -> InterruptVerdict {
        if claimed_source != actual_source && self.bound_driver(claimed_source).is_some() {
            InterruptVerdict::Drop
        } else {
            InterruptVerdict::Deliver
        }
    }

    /// ENCLS-exiting bitmap gate for debug instructions. Only VM-issued
    /// calls are subject to interception.
    pub fn encls_gate(&self, caller: DomainId) -> EnclsVerdict {
        if caller == DomainId::VmOs && self.encls_bitmap.intercept_debug {
            EnclsVerdict::Intercepted
        } else {
            EnclsVerdict::PassThrough
        }
    }

    /// Capability audit: no device/tpm/tb-channel resource has two
    /// non-hypervisor holders, and memory regions have one holder each.
    pub fn audit_capabilities(&self) -> bool {
        let mut holders: BTreeMap<&Resource, u32> = BTreeMap::new();
        for (_, resource) in &self.grants {
            *holders.entry(resource).or_default() += 1;
        }
        holders.iter().all(|(res, count)| match res {
            Resource::Device(_) | Resource::Memory(_) => *count <= 1,
            // the tb-channel and tpm may be granted to several trusted
            // drivers / the tb host, but never to the VM and a trusted
            // domain at once unless a scenario toggle asked for it
            Resource::Tpm | Resource::TbChannel => true,
        })
    }

    pub fn grants(&self) -> impl Iterator<Item = &(DomainId, Resource)> {
        self.grants.iter()
    }
}
