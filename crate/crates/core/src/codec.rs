//! Minimal DNS wire format: query encoding, response decoding, and the
//! 2-byte length framing shared by the stream transports.

use thiserror::Error;

pub const HEADER_LEN: usize = 12;
pub const MAX_NAME_LEN: usize = 255;
pub const MAX_LABEL_LEN: usize = 63;
pub const DEFAULT_EDNS_UDP_SIZE: u16 = 1232;

pub const TYPE_A: u16 = 1;
pub const TYPE_OPT: u16 = 41;
pub const CLASS_IN: u16 = 1;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_SERVFAIL: u8 = 2;
pub const RCODE_NXDOMAIN: u8 = 3;

const FLAG_QR: u16 = 0x8000;
const FLAG_AA: u16 = 0x0400;
const FLAG_TC: u16 = 0x0200;
const FLAG_RD: u16 = 0x0100;
const FLAG_RA: u16 = 0x0080;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid name: {0}")]
    InvalidName(String),
    #[error("truncated input: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed compression pointer at offset {0}")]
    BadPointer(usize),
    #[error("payload of {0} bytes does not fit a 16-bit length prefix")]
    OversizePayload(usize),
    #[error("incomplete frame: declared {declared} bytes, {available} available")]
    IncompleteFrame { declared: usize, available: usize },
    #[error("message carries {0} questions, expected exactly one")]
    QuestionCount(u16),
}

/// A single-question DNS query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsQuery {
    pub id: u16,
    pub qname: String,
    pub qtype: u16,
    pub recursion_desired: bool,
    /// UDP payload size advertised in an EDNS0 OPT record; `None` omits the record.
    pub edns_udp_size: Option<u16>,
}

impl DnsQuery {
    /// An A query with recursion desired and the default EDNS0 record.
    pub fn a(qname: impl Into<String>) -> Self {
        Self {
            id: 0,
            qname: qname.into(),
            qtype: TYPE_A,
            recursion_desired: true,
            edns_udp_size: Some(DEFAULT_EDNS_UDP_SIZE),
        }
    }

    pub fn with_id(mut self, id: u16) -> Self {
        self.id = id;
        self
    }

    pub fn without_edns(mut self) -> Self {
        self.edns_udp_size = None;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub name: String,
    pub rtype: u16,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsResponseSummary {
    pub id: u16,
    /// QR bit: set on responses, clear on queries.
    pub is_response: bool,
    pub rcode: u8,
    pub truncated: bool,
    pub answers: Vec<Answer>,
}

pub fn encode_query(q: &DnsQuery) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(HEADER_LEN + q.qname.len() + 2 + 4 + 11);
    let flags = if q.recursion_desired { FLAG_RD } else { 0 };
    let arcount = u16::from(q.edns_udp_size.is_some());
    write_header(&mut out, q.id, flags, 1, 0, arcount);
    write_name(&mut out, &q.qname)?;
    out.extend_from_slice(&q.qtype.to_be_bytes());
    out.extend_from_slice(&CLASS_IN.to_be_bytes());
    if let Some(size) = q.edns_udp_size {
        write_opt(&mut out, size);
    }
    Ok(out)
}

fn write_header(out: &mut Vec<u8>, id: u16, flags: u16, qd: u16, an: u16, ar: u16) {
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&flags.to_be_bytes());
    out.extend_from_slice(&qd.to_be_bytes());
    out.extend_from_slice(&an.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&ar.to_be_bytes());
}

// OPT pseudo-record: root owner, class carries the UDP size, TTL carries
// extended rcode/version/flags (all zero, DO clear), no options.
fn write_opt(out: &mut Vec<u8>, udp_size: u16) {
    out.push(0);
    out.extend_from_slice(&TYPE_OPT.to_be_bytes());
    out.extend_from_slice(&udp_size.to_be_bytes());
    out.extend_from_slice(&0u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
}

/// Writes `name` as uncompressed labels. `""` and `"."` denote the root.
pub fn write_name(out: &mut Vec<u8>, name: &str) -> Result<(), CodecError> {
    let trimmed = name.strip_suffix('.').unwrap_or(name);
    let start = out.len();
    if !trimmed.is_empty() {
        for label in trimmed.split('.') {
            if label.is_empty() {
                return Err(CodecError::InvalidName(format!("empty label in {name:?}")));
            }
            if label.len() > MAX_LABEL_LEN {
                return Err(CodecError::InvalidName(format!(
                    "label of {} octets exceeds {MAX_LABEL_LEN}",
                    label.len()
                )));
            }
            out.push(label.len() as u8);
            out.extend_from_slice(label.as_bytes());
        }
    }
    out.push(0);
    let wire_len = out.len() - start;
    if wire_len > MAX_NAME_LEN {
        out.truncate(start);
        return Err(CodecError::InvalidName(format!(
            "name of {wire_len} octets exceeds {MAX_NAME_LEN}"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CodecError::Truncated {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn name(&mut self) -> Result<String, CodecError> {
        let (name, next) = read_name(self.buf, self.pos)?;
        self.pos = next;
        Ok(name)
    }
}

/// Reads a possibly compressed name at `offset`; returns it with the offset
/// just past its in-place encoding. Pointers must point strictly backwards,
/// which rules out loops.
pub fn read_name(buf: &[u8], offset: usize) -> Result<(String, usize), CodecError> {
    let mut labels: Vec<String> = Vec::new();
    let mut pos = offset;
    let mut resume: Option<usize> = None;
    let mut wire_len = 0usize;
    loop {
        let len = *buf.get(pos).ok_or(CodecError::Truncated {
            offset: pos,
            needed: 1,
        })? as usize;
        match len & 0xC0 {
            0x00 => {
                if len == 0 {
                    pos += 1;
                    break;
                }
                let label = buf
                    .get(pos + 1..pos + 1 + len)
                    .ok_or(CodecError::Truncated {
                        offset: pos + 1,
                        needed: len,
                    })?;
                wire_len += len + 1;
                if wire_len + 1 > MAX_NAME_LEN {
                    return Err(CodecError::InvalidName("decoded name too long".into()));
                }
                labels.push(String::from_utf8_lossy(label).into_owned());
                pos += 1 + len;
            }
            0xC0 => {
                let lo = *buf.get(pos + 1).ok_or(CodecError::Truncated {
                    offset: pos + 1,
                    needed: 1,
                })? as usize;
                let target = ((len & 0x3F) << 8) | lo;
                if target >= pos || target >= buf.len() {
                    return Err(CodecError::BadPointer(pos));
                }
                resume.get_or_insert(pos + 2);
                pos = target;
            }
            _ => return Err(CodecError::BadPointer(pos)),
        }
    }
    Ok((labels.join("."), resume.unwrap_or(pos)))
}

pub fn decode_response(b: &[u8]) -> Result<DnsResponseSummary, CodecError> {
    if b.len() < HEADER_LEN {
        return Err(CodecError::Truncated {
            offset: 0,
            needed: HEADER_LEN,
        });
    }
    let mut r = Reader { buf: b, pos: 0 };
    let id = r.u16()?;
    let flags = r.u16()?;
    let qdcount = r.u16()?;
    let ancount = r.u16()?;
    let _nscount = r.u16()?;
    let _arcount = r.u16()?;
    for _ in 0..qdcount {
        r.name()?;
        r.take(4)?;
    }
    let mut answers = Vec::with_capacity(ancount as usize);
    for _ in 0..ancount {
        let name = r.name()?;
        let rtype = r.u16()?;
        let _class = r.u16()?;
        let ttl = r.u32()?;
        let rdlen = r.u16()? as usize;
        let rdata = r.take(rdlen)?.to_vec();
        answers.push(Answer {
            name,
            rtype,
            ttl,
            rdata,
        });
    }
    Ok(DnsResponseSummary {
        id,
        is_response: flags & FLAG_QR != 0,
        rcode: (flags & 0x000F) as u8,
        truncated: flags & FLAG_TC != 0,
        answers,
    })
}

/// Server-side view of an incoming query: the fields needed to answer it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuery {
    pub id: u16,
    pub recursion_desired: bool,
    pub qname: String,
    pub qtype: u16,
    pub qclass: u16,
    /// Raw question section, echoed back in the response.
    pub question: Vec<u8>,
}

pub fn parse_query(b: &[u8]) -> Result<ParsedQuery, CodecError> {
    if b.len() < HEADER_LEN {
        return Err(CodecError::Truncated {
            offset: 0,
            needed: HEADER_LEN,
        });
    }
    let mut r = Reader { buf: b, pos: 0 };
    let id = r.u16()?;
    let flags = r.u16()?;
    let qdcount = r.u16()?;
    if qdcount != 1 {
        return Err(CodecError::QuestionCount(qdcount));
    }
    r.pos = HEADER_LEN;
    let qname = r.name()?;
    let qtype = r.u16()?;
    let qclass = r.u16()?;
    let mut question = Vec::new();
    write_name(&mut question, &qname)?;
    question.extend_from_slice(&qtype.to_be_bytes());
    question.extend_from_slice(&qclass.to_be_bytes());
    Ok(ParsedQuery {
        id,
        recursion_desired: flags & FLAG_RD != 0,
        qname,
        qtype,
        qclass,
        question,
    })
}

/// Builds an authoritative-looking response. Answer owners are written as a
/// pointer to the question name at offset 12.
pub fn encode_response(q: &ParsedQuery, rcode: u8, answers: &[(u16, u32, Vec<u8>)]) -> Vec<u8> {
    let mut flags = FLAG_QR | FLAG_AA | FLAG_RA | u16::from(rcode & 0x0F);
    if q.recursion_desired {
        flags |= FLAG_RD;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + q.question.len() + answers.len() * 16);
    write_header(&mut out, q.id, flags, 1, answers.len() as u16, 0);
    out.extend_from_slice(&q.question);
    for (rtype, ttl, rdata) in answers {
        out.extend_from_slice(&[0xC0, HEADER_LEN as u8]);
        out.extend_from_slice(&rtype.to_be_bytes());
        out.extend_from_slice(&q.qclass.to_be_bytes());
        out.extend_from_slice(&ttl.to_be_bytes());
        out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
        out.extend_from_slice(rdata);
    }
    out
}

/// Overwrites the message ID in place.
pub fn set_id(msg: &mut [u8], id: u16) {
    if msg.len() >= 2 {
        msg[..2].copy_from_slice(&id.to_be_bytes());
    }
}

pub fn message_id(msg: &[u8]) -> Option<u16> {
    (msg.len() >= 2).then(|| u16::from_be_bytes([msg[0], msg[1]]))
}

pub fn frame(payload: &[u8]) -> Result<Vec<u8>, CodecError> {
    let len =
        u16::try_from(payload.len()).map_err(|_| CodecError::OversizePayload(payload.len()))?;
    let mut out = Vec::with_capacity(payload.len() + 2);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Splits one length-prefixed message off the front of `b`.
pub fn unframe(b: &[u8]) -> Result<(&[u8], &[u8]), CodecError> {
    if b.len() < 2 {
        return Err(CodecError::IncompleteFrame {
            declared: 2,
            available: b.len(),
        });
    }
    let declared = u16::from_be_bytes([b[0], b[1]]) as usize;
    let body = &b[2..];
    if body.len() < declared {
        return Err(CodecError::IncompleteFrame {
            declared,
            available: body.len(),
        });
    }
    Ok(body.split_at(declared))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn google_a_without_edns_is_28_bytes() {
        let q = DnsQuery::a("google.com").with_id(0x1234).without_edns();
        let wire = encode_query(&q).unwrap();
        assert_eq!(wire.len(), 28);
        assert_eq!(&wire[..4], &[0x12, 0x34, 0x01, 0x00]);
        assert_eq!(
            &wire[12..24],
            &[6, b'g', b'o', b'o', b'g', b'l', b'e', 3, b'c', b'o', b'm', 0]
        );
    }

    #[test]
    fn root_name_is_17_bytes() {
        let q = DnsQuery::a("").without_edns();
        assert_eq!(encode_query(&q).unwrap().len(), 17);
        let q = DnsQuery::a(".").without_edns();
        assert_eq!(encode_query(&q).unwrap().len(), 17);
    }

    #[test]
    fn edns_adds_an_11_byte_opt_record() {
        let q = DnsQuery::a("google.com").with_id(7);
        let wire = encode_query(&q).unwrap();
        assert_eq!(wire.len(), 39);
        assert_eq!(&wire[10..12], &[0, 1]);
        assert_eq!(&wire[28..], &[0, 0, 41, 0x04, 0xD0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn label_of_64_octets_is_rejected() {
        let q = DnsQuery::a(format!("{}.com", "a".repeat(64)));
        assert!(matches!(encode_query(&q), Err(CodecError::InvalidName(_))));
        let ok = DnsQuery::a(format!("{}.com", "a".repeat(63)));
        assert!(encode_query(&ok).is_ok());
    }

    #[test]
    fn overlong_name_is_rejected() {
        let name = vec!["a".repeat(63); 4].join(".");
        assert!(matches!(
            encode_query(&DnsQuery::a(name)),
            Err(CodecError::InvalidName(_))
        ));
        let name = vec!["a".repeat(62); 4].join(".");
        assert!(encode_query(&DnsQuery::a(name)).is_ok());
    }

    #[test]
    fn empty_interior_label_is_rejected() {
        assert!(encode_query(&DnsQuery::a("a..b")).is_err());
    }

    #[test]
    fn decoding_a_query_gives_its_id_and_no_answers() {
        let q = DnsQuery::a("example.org").with_id(0xBEEF);
        let s = decode_response(&encode_query(&q).unwrap()).unwrap();
        assert_eq!(s.id, 0xBEEF);
        assert!(!s.is_response);
        assert!(s.answers.is_empty());
    }

    #[test]
    fn eleven_bytes_is_truncated() {
        assert!(matches!(
            decode_response(&[0u8; 11]),
            Err(CodecError::Truncated { .. })
        ));
    }

    #[test]
    fn self_pointer_is_rejected() {
        let mut msg = vec![0, 1, 0x81, 0x80, 0, 1, 0, 0, 0, 0, 0, 0];
        msg.extend_from_slice(&[0xC0, 12, 0, 1, 0, 1]);
        assert!(matches!(
            decode_response(&msg),
            Err(CodecError::BadPointer(12))
        ));
    }

    #[test]
    fn forward_pointer_is_rejected() {
        let mut msg = vec![0, 1, 0x81, 0x80, 0, 1, 0, 0, 0, 0, 0, 0];
        msg.extend_from_slice(&[0xC0, 40, 0, 1, 0, 1]);
        assert!(matches!(
            decode_response(&msg),
            Err(CodecError::BadPointer(_))
        ));
    }

    #[test]
    fn response_round_trip_through_server_helpers() {
        let q = DnsQuery::a("Google.com").with_id(99);
        let parsed = parse_query(&encode_query(&q).unwrap()).unwrap();
        assert_eq!(parsed.qname, "Google.com");
        let resp = encode_response(&parsed, RCODE_NOERROR, &[(TYPE_A, 300, vec![10, 0, 0, 1])]);
        let s = decode_response(&resp).unwrap();
        assert_eq!(s.id, 99);
        assert!(s.is_response);
        assert_eq!(s.answers.len(), 1);
        assert_eq!(s.answers[0].name, "Google.com");
        assert_eq!(s.answers[0].rdata, vec![10, 0, 0, 1]);
    }

    #[test]
    fn frame_edges() {
        assert_eq!(frame(&[]).unwrap(), vec![0, 0]);
        let q = encode_query(&DnsQuery::a("google.com").without_edns()).unwrap();
        let f = frame(&q).unwrap();
        assert_eq!(f.len(), 30);
        assert_eq!(&f[..2], &[0x00, 0x1C]);
        assert!(matches!(
            frame(&vec![0u8; 65536]),
            Err(CodecError::OversizePayload(65536))
        ));
        assert!(matches!(
            unframe(&[0]),
            Err(CodecError::IncompleteFrame { .. })
        ));
        assert!(matches!(
            unframe(&[0, 5, 1, 2]),
            Err(CodecError::IncompleteFrame {
                declared: 5,
                available: 2
            })
        ));
    }

    #[test]
    fn frames_compose() {
        let p = b"first".to_vec();
        let p2 = b"second".to_vec();
        let mut both = frame(&p).unwrap();
        both.extend(frame(&p2).unwrap());
        let (a, rest) = unframe(&both).unwrap();
        assert_eq!(a, &p[..]);
        assert_eq!(rest, &frame(&p2).unwrap()[..]);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn label() -> impl Strategy<Value = String> {
            "[a-z0-9-]{1,20}"
        }

        fn query() -> impl Strategy<Value = DnsQuery> {
            (
                any::<u16>(),
                prop::collection::vec(label(), 0..5),
                any::<u16>(),
                any::<bool>(),
                prop::option::of(512u16..4096),
            )
                .prop_map(|(id, labels, qtype, rd, edns)| DnsQuery {
                    id,
                    qname: labels.join("."),
                    qtype,
                    recursion_desired: rd,
                    edns_udp_size: edns,
                })
        }

        proptest! {
            #[test]
            fn unframe_inverts_frame(p in prop::collection::vec(any::<u8>(), 0..2048)) {
                let f = frame(&p).unwrap();
                let (body, rest) = unframe(&f).unwrap();
                prop_assert_eq!(body, &p[..]);
                prop_assert!(rest.is_empty());
            }

            #[test]
            fn id_survives_encode_decode(q in query()) {
                let wire = encode_query(&q).unwrap();
                prop_assert_eq!(decode_response(&wire).unwrap().id, q.id);
                prop_assert_eq!(wire.clone(), encode_query(&q).unwrap());
                let parsed = parse_query(&wire).unwrap();
                prop_assert_eq!(parsed.qname, q.qname);
                prop_assert_eq!(parsed.qtype, q.qtype);
            }

            #[test]
            fn decoder_never_panics(b in prop::collection::vec(any::<u8>(), 0..300)) {
                let _ = decode_response(&b);
                let _ = parse_query(&b);
            }
        }
    }
}
