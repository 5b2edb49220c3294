//! TLS client contexts shared by DoT, DoH and DoQ.
//!
//! rustls only resumes a stored session when the new connection uses the same
//! verifier object that accepted it, so each protocol keeps one base config and
//! every connection clones it, swapping in a session store bound to its key.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::client::{Resumption, Tls12Resumption, WebPkiServerVerifier};
use rustls::crypto::CryptoProvider;
use rustls::pki_types::{CertificateDer, ServerName, UnixTime};
use rustls::{ClientConfig, DigitallySignedStruct, RootCertStore, SignatureScheme};

use super::{ClientOptions, Target, TransportError};
use crate::expectation::TlsVersion;
use crate::protocol::ProtocolKind;
use crate::session::TlsSessionAdapter;

/// How server certificates are checked.
#[derive(Debug, Clone, Default)]
pub enum Verification {
    /// The Mozilla root set bundled with the binary.
    #[default]
    WebPki,
    /// Only the given trust anchors (DER-encoded).
    Roots(Vec<Vec<u8>>),
    /// Accept any certificate; signatures on the handshake are still checked.
    Insecure,
}

pub(crate) fn provider() -> Arc<CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

/// Wraps a verifier and counts full certificate verifications per server name.
/// A resumed TLS 1.3 handshake carries no certificate, so an unchanged count
/// across a handshake that offered a ticket means the ticket was accepted.
#[derive(Debug)]
pub struct TrackingVerifier {
    inner: Arc<dyn ServerCertVerifier>,
    verified: Mutex<HashMap<String, u64>>,
}

impl TrackingVerifier {
    fn new(inner: Arc<dyn ServerCertVerifier>) -> Self {
        Self {
            inner,
            verified: Mutex::default(),
        }
    }

    pub fn verifications(&self, server_name: &str) -> u64 {
        self.verified
            .lock()
            .unwrap()
            .get(server_name)
            .copied()
            .unwrap_or(0)
    }
}

fn name_key(name: &ServerName<'_>) -> String {
    match name {
        ServerName::DnsName(d) => d.as_ref().to_string(),
        ServerName::IpAddress(ip) => std::net::IpAddr::from(*ip).to_string(),
        other => format!("{other:?}"),
    }
}

impl ServerCertVerifier for TrackingVerifier {
    fn verify_server_cert(
        &self,
        end_entity: &CertificateDer<'_>,
        intermediates: &[CertificateDer<'_>],
        server_name: &ServerName<'_>,
        ocsp: &[u8],
        now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        *self
            .verified
            .lock()
            .unwrap()
            .entry(name_key(server_name))
            .or_default() += 1;
        self.inner
            .verify_server_cert(end_entity, intermediates, server_name, ocsp, now)
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        self.inner.verify_tls12_signature(message, cert, dss)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        self.inner.verify_tls13_signature(message, cert, dss)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.inner.supported_verify_schemes()
    }
}

#[derive(Debug)]
struct AcceptAnyCert {
    provider: Arc<CryptoProvider>,
}

impl ServerCertVerifier for AcceptAnyCert {
    fn verify_server_cert(
        &self,
        _: &CertificateDer<'_>,
        _: &[CertificateDer<'_>],
        _: &ServerName<'_>,
        _: &[u8],
        _: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        Ok(ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        rustls::crypto::verify_tls12_signature(
            message,
            cert,
            dss,
            &self.provider.signature_verification_algorithms,
        )
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        rustls::crypto::verify_tls13_signature(
            message,
            cert,
            dss,
            &self.provider.signature_verification_algorithms,
        )
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.provider
            .signature_verification_algorithms
            .supported_schemes()
    }
}

fn base_verifier(v: &Verification) -> Result<Arc<dyn ServerCertVerifier>, TransportError> {
    let provider = provider();
    match v {
        Verification::Insecure => Ok(Arc::new(AcceptAnyCert { provider })),
        Verification::WebPki | Verification::Roots(_) => {
            let mut roots = RootCertStore::empty();
            if let Verification::Roots(ders) = v {
                for der in ders {
                    roots
                        .add(CertificateDer::from(der.clone()))
                        .map_err(|e| TransportError::Tls(format!("bad trust anchor: {e}")))?;
                }
            } else {
                roots.extend(webpki_roots::TLS_SERVER_ROOTS.iter().cloned());
            }
            WebPkiServerVerifier::builder_with_provider(Arc::new(roots), provider)
                .build()
                .map(|v| v as Arc<dyn ServerCertVerifier>)
                .map_err(|e| TransportError::Tls(e.to_string()))
        }
    }
}

struct ProtocolTls {
    verifier: Arc<TrackingVerifier>,
    config: ClientConfig,
}

/// Base client configs, one per encrypted protocol.
pub(crate) struct TlsContext {
    dot: ProtocolTls,
    doh: ProtocolTls,
    doq: ProtocolTls,
}

impl TlsContext {
    pub(crate) fn new(opts: &ClientOptions) -> Result<Self, TransportError> {
        let tcp_versions: Vec<&'static rustls::SupportedProtocolVersion> = opts
            .tls_versions
            .iter()
            .filter_map(|v| match v {
                TlsVersion::Tls13 => Some(&rustls::version::TLS13),
                TlsVersion::Tls12 => Some(&rustls::version::TLS12),
                TlsVersion::None => None,
            })
            .collect();
        if tcp_versions.is_empty() {
            return Err(TransportError::Tls("no TLS version enabled".into()));
        }
        let build = |versions: &[&'static rustls::SupportedProtocolVersion],
                     alpn: &[&[u8]],
                     early: bool|
         -> Result<ProtocolTls, TransportError> {
            let verifier = Arc::new(TrackingVerifier::new(base_verifier(&opts.verification)?));
            let mut config = ClientConfig::builder_with_provider(provider())
                .with_protocol_versions(versions)
                .map_err(|e| TransportError::Tls(e.to_string()))?
                .dangerous()
                .with_custom_certificate_verifier(verifier.clone())
                .with_no_client_auth();
            config.alpn_protocols = alpn.iter().map(|a| a.to_vec()).collect();
            config.enable_early_data = early;
            Ok(ProtocolTls { verifier, config })
        };
        Ok(Self {
            dot: build(&tcp_versions, &[b"dot"], false)?,
            doh: build(&tcp_versions, &[b"h2"], false)?,
            doq: build(&[&rustls::version::TLS13], &[], opts.enable_0rtt)?,
        })
    }

    fn entry(&self, protocol: ProtocolKind) -> &ProtocolTls {
        match protocol {
            ProtocolKind::DoH => &self.doh,
            ProtocolKind::DoQ => &self.doq,
            _ => &self.dot,
        }
    }

    /// A per-connection config presenting state from `store`.
    pub(crate) fn config_for(
        &self,
        protocol: ProtocolKind,
        store: Arc<TlsSessionAdapter>,
        alpn: Option<&[String]>,
    ) -> ClientConfig {
        let mut config = self.entry(protocol).config.clone();
        config.resumption =
            Resumption::store(store).tls12_resumption(Tls12Resumption::SessionIdOrTickets);
        if let Some(alpn) = alpn {
            config.alpn_protocols = alpn.iter().map(|a| a.as_bytes().to_vec()).collect();
        }
        config
    }

    pub(crate) fn verifications(&self, protocol: ProtocolKind, server_name: &str) -> u64 {
        self.entry(protocol).verifier.verifications(server_name)
    }
}

pub(crate) fn server_name(target: &Target) -> Result<ServerName<'static>, TransportError> {
    match &target.tls_name {
        Some(name) => ServerName::try_from(name.clone())
            .map_err(|e| TransportError::Tls(format!("invalid server name {name:?}: {e}"))),
        None => Ok(ServerName::IpAddress(target.addr.ip().into())),
    }
}

pub(crate) fn server_name_str(target: &Target) -> String {
    target
        .tls_name
        .clone()
        .unwrap_or_else(|| target.addr.ip().to_string())
}

pub(crate) fn version_label(v: Option<rustls::ProtocolVersion>) -> Option<String> {
    match v? {
        rustls::ProtocolVersion::TLSv1_3 => Some("1.3".into()),
        rustls::ProtocolVersion::TLSv1_2 => Some("1.2".into()),
        other => Some(format!("{other:?}")),
    }
}

pub(crate) fn tls_error(e: impl std::fmt::Display) -> TransportError {
    TransportError::Tls(e.to_string())
}
