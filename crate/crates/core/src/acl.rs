//! Agent identity, registration and message routing.
//!
//! The platform keeps a versioned table of active agents (the AMS table),
//! one single-consumer inbox per agent, and an append-only log holding a
//! copy of every delivered message while the AMS agent is active. Peers
//! route by looking up the receiver in the table; once registered they keep
//! talking to each other even when the AMS itself has been deactivated.
//!
//! Timestamps are logical ticks drawn from one platform-wide counter, so
//! they are strictly increasing per sender and replay deterministically.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name under which the management agent registers itself.
pub const AMS_NAME: &str = "ams";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AclError {
    #[error("agent name `{0}` is already registered")]
    DuplicateName(String),
    #[error("no active agent named `{0}`")]
    UnknownReceiver(String),
    #[error("invalid agent id: {0}")]
    InvalidAgent(&'static str),
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error("timestamp {got} is not after the last tick {last} seen from `{sender}`")]
    NonMonotonicTimestamp { sender: String, last: u64, got: u64 },
}

/// Agent identifier: unique name plus logical endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId {
    pub name: String,
    pub address: String,
}

impl AgentId {
    pub fn new(name: impl Into<String>, address: impl Into<String>) -> Result<Self, AclError> {
        let id = AgentId {
            name: name.into(),
            address: address.into(),
        };
        id.validate()?;
        Ok(id)
    }

    /// Agent living on the in-process transport, addressed as `local://<name>`.
    pub fn local(name: &str) -> Self {
        AgentId {
            name: name.to_string(),
            address: format!("local://{name}"),
        }
    }

    fn validate(&self) -> Result<(), AclError> {
        if self.name.is_empty() {
            return Err(AclError::InvalidAgent("name must be non-empty"));
        }
        if self.address.is_empty() {
            return Err(AclError::InvalidAgent("address must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Performative {
    Request,
    Inform,
    Failure,
    Confirm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclMessage {
    pub performative: Performative,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub conversation_id: String,
    pub content: String,
    pub timestamp: u64,
}

impl AclMessage {
    fn check_shape(&self) -> Result<(), AclError> {
        if self.sender.name == self.receiver.name {
            return Err(AclError::Malformed("sender and receiver must differ"));
        }
        if self.conversation_id.is_empty() {
            return Err(AclError::Malformed("conversation id must be non-empty"));
        }
        self.sender.validate()?;
        self.receiver.validate()
    }
}

/// Versioned table of active agents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTable {
    entries: BTreeMap<String, AgentId>,
    version: u64,
}

impl AgentTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&AgentId> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// A failed registration leaves both the entries and the version untouched.
    pub fn register(&mut self, agent: AgentId) -> Result<(), AclError> {
        agent.validate()?;
        if self.entries.contains_key(&agent.name) {
            return Err(AclError::DuplicateName(agent.name));
        }
        self.entries.insert(agent.name.clone(), agent);
        self.version += 1;
        Ok(())
    }

    pub fn deactivate(&mut self, name: &str) -> Result<AgentId, AclError> {
        let removed = self
            .entries
            .remove(name)
            .ok_or_else(|| AclError::UnknownReceiver(name.to_string()))?;
        self.version += 1;
        Ok(removed)
    }
}

/// Notice queued for already-registered agents whenever the table changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableUpdate {
    pub version: u64,
    pub agent: String,
    pub joined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub timestamp: u64,
    pub logged: bool,
}

/// Delivery contract between the router and wherever inboxes live.
pub trait Transport: Send + Sync {
    fn open(&self, name: &str);
    fn close(&self, name: &str);
    fn push(&self, msg: AclMessage) -> Result<(), AclError>;
    fn pop(&self, name: &str) -> Option<AclMessage>;
    fn pending(&self, name: &str) -> usize;
}

/// In-process queues, one per agent.
#[derive(Debug, Default)]
pub struct InProcessTransport {
    inboxes: Mutex<HashMap<String, VecDeque<AclMessage>>>,
}

impl Transport for InProcessTransport {
    fn open(&self, name: &str) {
        self.inboxes.lock().unwrap().entry(name.to_string()).or_default();
    }

    fn close(&self, name: &str) {
        self.inboxes.lock().unwrap().remove(name);
    }

    fn push(&self, msg: AclMessage) -> Result<(), AclError> {
        let mut inboxes = self.inboxes.lock().unwrap();
        match inboxes.get_mut(&msg.receiver.name) {
            Some(queue) => {
                queue.push_back(msg);
                Ok(())
            }
            None => Err(AclError::UnknownReceiver(msg.receiver.name)),
        }
    }

    fn pop(&self, name: &str) -> Option<AclMessage> {
        self.inboxes.lock().unwrap().get_mut(name)?.pop_front()
    }

    fn pending(&self, name: &str) -> usize {
        self.inboxes.lock().unwrap().get(name).map_or(0, VecDeque::len)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlatformConfig {
    /// Maximum number of retained log records; `None` keeps everything.
    pub log_capacity: Option<usize>,
}

#[derive(Debug, Default)]
struct MessageLog {
    records: VecDeque<AclMessage>,
    evicted: u64,
}

/// The agent platform: AMS table, router and message log.
pub struct Platform {
    config: PlatformConfig,
    table: RwLock<AgentTable>,
    transport: Box<dyn Transport>,
    log: Mutex<MessageLog>,
    notifications: Mutex<HashMap<String, VecDeque<TableUpdate>>>,
    last_tick: Mutex<HashMap<String, u64>>,
    clock: AtomicU64,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("table", &*self.table.read().unwrap())
            .field("log_len", &self.log.lock().unwrap().records.len())
            .finish_non_exhaustive()
    }
}

impl Platform {
    /// Starts a platform whose first registered agent is the AMS.
    pub fn new(config: PlatformConfig) -> Self {
        Self::with_transport(config, Box::new(InProcessTransport::default()))
    }

    pub fn with_transport(config: PlatformConfig, transport: Box<dyn Transport>) -> Self {
        let platform = Platform {
            config,
            table: RwLock::new(AgentTable::new()),
            transport,
            log: Mutex::new(MessageLog::default()),
            notifications: Mutex::new(HashMap::new()),
            last_tick: Mutex::new(HashMap::new()),
            clock: AtomicU64::new(0),
        };
        platform
            .register_agent(AgentId::local(AMS_NAME))
            .expect("fresh table accepts the AMS");
        platform
    }

    pub fn table(&self) -> AgentTable {
        self.table.read().unwrap().clone()
    }

    pub fn ams_active(&self) -> bool {
        self.table.read().unwrap().contains(AMS_NAME)
    }

    pub fn register_agent(&self, agent: AgentId) -> Result<u64, AclError> {
        let mut table = self.table.write().unwrap();
        let previous: Vec<String> = table.names().map(str::to_string).collect();
        table.register(agent.clone())?;
        self.transport.open(&agent.name);
        let update = TableUpdate {
            version: table.version(),
            agent: agent.name.clone(),
            joined: true,
        };
        let mut notes = self.notifications.lock().unwrap();
        notes.entry(agent.name).or_default();
        for name in previous {
            notes.entry(name).or_default().push_back(update.clone());
        }
        Ok(table.version())
    }

    /// Removes `name` from the table and drops its inbox. Deactivating the
    /// AMS stops logging but leaves peer routing intact.
    pub fn deactivate_agent(&self, name: &str) -> Result<u64, AclError> {
        let mut table = self.table.write().unwrap();
        table.deactivate(name)?;
        self.transport.close(name);
        let update = TableUpdate {
            version: table.version(),
            agent: name.to_string(),
            joined: false,
        };
        let mut notes = self.notifications.lock().unwrap();
        notes.remove(name);
        for peer in table.names() {
            notes
                .entry(peer.to_string())
                .or_default()
                .push_back(update.clone());
        }
        Ok(table.version())
    }

    /// Stamps a message with the next logical tick and routes it.
    pub fn send(
        &self,
        performative: Performative,
        sender: &AgentId,
        receiver: &AgentId,
        conversation_id: &str,
        content: impl Into<String>,
    ) -> Result<Receipt, AclError> {
        let msg = AclMessage {
            performative,
            sender: sender.clone(),
            receiver: receiver.clone(),
            conversation_id: conversation_id.to_string(),
            content: content.into(),
            timestamp: self.clock.fetch_add(1, Ordering::SeqCst) + 1,
        };
        self.route_message(msg)
    }

    pub fn route_message(&self, msg: AclMessage) -> Result<Receipt, AclError> {
        msg.check_shape()?;
        // Held for the whole delivery so deactivation cannot interleave.
        let table = self.table.read().unwrap();
        if !table.contains(&msg.receiver.name) {
            return Err(AclError::UnknownReceiver(msg.receiver.name));
        }
        {
            let mut ticks = self.last_tick.lock().unwrap();
            let last = ticks.get(&msg.sender.name).copied().unwrap_or(0);
            if msg.timestamp <= last {
                return Err(AclError::NonMonotonicTimestamp {
                    sender: msg.sender.name.clone(),
                    last,
                    got: msg.timestamp,
                });
            }
            ticks.insert(msg.sender.name.clone(), msg.timestamp);
        }
        self.clock.fetch_max(msg.timestamp, Ordering::SeqCst);
        let logged = table.contains(AMS_NAME);
        let timestamp = msg.timestamp;
        let copy = logged.then(|| msg.clone());
        self.transport.push(msg)?;
        if let Some(copy) = copy {
            let mut log = self.log.lock().unwrap();
            log.records.push_back(copy);
            if let Some(cap) = self.config.log_capacity {
                while log.records.len() > cap {
                    log.records.pop_front();
                    log.evicted += 1;
                }
            }
        }
        Ok(Receipt { timestamp, logged })
    }

    /// Takes the oldest message from an agent's inbox.
    pub fn receive(&self, name: &str) -> Option<AclMessage> {
        self.transport.pop(name)
    }

    pub fn pending(&self, name: &str) -> usize {
        self.transport.pending(name)
    }

    pub fn take_notifications(&self, name: &str) -> Vec<TableUpdate> {
        self.notifications
            .lock()
            .unwrap()
            .get_mut(name)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }

    pub fn log_len(&self) -> usize {
        self.log.lock().unwrap().records.len()
    }

    pub fn log_snapshot(&self) -> Vec<AclMessage> {
        self.log.lock().unwrap().records.iter().cloned().collect()
    }

    /// Writes the log as one JSON record per line.
    pub fn export_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for msg in self.log_snapshot() {
            serde_json::to_writer(&mut out, &LogRecord::from(&msg))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Flattened log line: agent ids are reduced to their names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub performative: Performative,
    pub sender: String,
    pub receiver: String,
    pub conversation_id: String,
    pub content: String,
    pub timestamp: u64,
}

impl From<&AclMessage> for LogRecord {
    fn from(msg: &AclMessage) -> Self {
        LogRecord {
            performative: msg.performative,
            sender: msg.sender.name.clone(),
            receiver: msg.receiver.name.clone(),
            conversation_id: msg.conversation_id.clone(),
            content: msg.content.clone(),
            timestamp: msg.timestamp,
        }
    }
}
