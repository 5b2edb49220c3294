use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::codec::DnsQuery;
use crate::protocol::ProtocolKind;
use crate::transport::{AccountingMode, QueryOutcome, TransportError};

/// One row of a campaign's JSONL output. Field names are a stable contract,
/// described by `schema/measurement_record.schema.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub timestamp_utc: DateTime<Utc>,
    pub round_start_utc: DateTime<Utc>,
    pub campaign_round: u32,
    pub vantage_label: String,
    /// `ip:port` for measurements, the bare IP for skip records.
    pub resolver: String,
    /// Absent only on skip records, which cover every protocol of a resolver.
    #[serde(default)]
    pub protocol: Option<ProtocolKind>,
    pub qname: String,
    pub qtype: u16,
    pub warm: bool,
    #[serde(default)]
    pub handshake_ms: Option<f64>,
    #[serde(default)]
    pub resolve_ms: Option<f64>,
    #[serde(default)]
    pub e2e_ms: Option<f64>,
    #[serde(default)]
    pub hs_c2r_bytes: Option<u64>,
    #[serde(default)]
    pub hs_r2c_bytes: Option<u64>,
    #[serde(default)]
    pub query_bytes: Option<u64>,
    #[serde(default)]
    pub response_bytes: Option<u64>,
    #[serde(default)]
    pub accounting_mode: Option<AccountingMode>,
    #[serde(default)]
    pub retransmissions: u32,
    #[serde(default)]
    pub tls_version: Option<String>,
    #[serde(default)]
    pub quic_version: Option<u32>,
    #[serde(default)]
    pub doq_alpn: Option<String>,
    #[serde(default)]
    pub resumed: bool,
    #[serde(default)]
    pub zero_rtt_used: bool,
    #[serde(default)]
    pub rcode: Option<u8>,
    #[serde(default)]
    pub answer_count: Option<u32>,
    /// Stable error code; set on error and skip records.
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub error_detail: Option<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Where and when a measurement ran.
#[derive(Debug, Clone)]
pub struct RecordContext {
    pub timestamp_utc: DateTime<Utc>,
    pub round_start_utc: DateTime<Utc>,
    pub campaign_round: u32,
    pub vantage_label: String,
    pub resolver: String,
}

impl MeasurementRecord {
    fn blank(
        ctx: &RecordContext,
        protocol: Option<ProtocolKind>,
        query: &DnsQuery,
        warm: bool,
    ) -> Self {
        Self {
            timestamp_utc: ctx.timestamp_utc,
            round_start_utc: ctx.round_start_utc,
            campaign_round: ctx.campaign_round,
            vantage_label: ctx.vantage_label.clone(),
            resolver: ctx.resolver.clone(),
            protocol,
            qname: query.qname.clone(),
            qtype: query.qtype,
            warm,
            handshake_ms: None,
            resolve_ms: None,
            e2e_ms: None,
            hs_c2r_bytes: None,
            hs_r2c_bytes: None,
            query_bytes: None,
            response_bytes: None,
            accounting_mode: None,
            retransmissions: 0,
            tls_version: None,
            quic_version: None,
            doq_alpn: None,
            resumed: false,
            zero_rtt_used: false,
            rcode: None,
            answer_count: None,
            error: None,
            error_detail: None,
            notes: Vec::new(),
        }
    }

    pub fn from_result(
        ctx: &RecordContext,
        protocol: ProtocolKind,
        query: &DnsQuery,
        warm: bool,
        result: &Result<QueryOutcome, TransportError>,
    ) -> Self {
        let mut r = Self::blank(ctx, Some(protocol), query, warm);
        match result {
            Ok(o) => {
                r.handshake_ms = o.timing.handshake_ms;
                r.resolve_ms = Some(o.timing.resolve_ms);
                r.e2e_ms = Some(o.timing.e2e_ms);
                r.hs_c2r_bytes = Some(o.bytes.hs_c2r_bytes);
                r.hs_r2c_bytes = Some(o.bytes.hs_r2c_bytes);
                r.query_bytes = Some(o.bytes.query_bytes);
                r.response_bytes = Some(o.bytes.response_bytes);
                r.accounting_mode = Some(o.bytes.accounting_mode);
                r.retransmissions = o.retransmissions;
                r.tls_version = o.tls_version.clone();
                r.quic_version = o.quic_version;
                r.doq_alpn = o.doq_alpn.clone();
                r.resumed = o.resumed;
                r.zero_rtt_used = o.zero_rtt_used;
                r.rcode = Some(o.response.rcode);
                r.answer_count = Some(o.response.answers.len() as u32);
                r.notes = o.notes.clone();
            }
            Err(e) => {
                r.error = Some(e.code().to_string());
                r.error_detail = Some(e.to_string());
            }
        }
        r
    }

    /// Marks a resolver that was not contacted.
    pub fn skip(ctx: &RecordContext, query: &DnsQuery, reason: &TransportError) -> Self {
        let mut r = Self::blank(ctx, None, query, false);
        r.error = Some(reason.code().to_string());
        r.error_detail = Some(reason.to_string());
        r
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    pub fn is_skip(&self) -> bool {
        self.protocol.is_none()
    }
}
