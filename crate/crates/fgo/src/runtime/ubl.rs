//! Field extraction from UBL (Universal Business Language) invoices.

use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};

/// A shipping invoice whose transport reference is [`SAMPLE_REFERENCE`].
pub const SAMPLE_INVOICE: &str = include_str!("../../data/ubl_sample.xml");
pub const SAMPLE_REFERENCE: &str = "847 5321 9084";

const UBL_NAMESPACE: &str = "oasis:names:specification:ubl";
const UBL_ROOTS: [&str; 5] = ["Invoice", "CreditNote", "DebitNote", "Order", "DespatchAdvice"];

/// One text node: its element path and the exact source bytes it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSpan {
    pub path: String,
    pub start: usize,
    pub end: usize,
    /// Verbatim source text, ends trimmed.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Amount {
    pub name: String,
    pub currency: Option<String>,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UblRecord {
    pub root: String,
    /// False when the document is well-formed XML but not a UBL document;
    /// fields are still extracted generically.
    pub is_ubl: bool,
    pub ids: Vec<String>,
    pub notes: Vec<String>,
    pub payment_terms: Vec<String>,
    pub party_names: Vec<String>,
    pub line_items: Vec<String>,
    pub totals: Vec<Amount>,
    pub spans: Vec<TextSpan>,
}

impl UblRecord {
    /// Every text span in document order, one per line.
    pub fn flattened(&self) -> String {
        self.spans.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct UblError {
    pub line: usize,
    pub column: usize,
    pub offset: usize,
    pub message: String,
}

impl UblError {
    fn at(src: &str, offset: usize, message: impl Into<String>) -> Self {
        let offset = offset.min(src.len());
        let before = &src.as_bytes()[..offset];
        let line = before.iter().filter(|b| **b == b'\n').count() + 1;
        let line_start = before.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
        let column = String::from_utf8_lossy(&before[line_start..]).chars().count() + 1;
        UblError {
            line,
            column,
            offset,
            message: message.into(),
        }
    }
}

struct Open {
    local: String,
    currency: Option<String>,
}

struct Run {
    start: usize,
    end: usize,
    value: String,
}

fn valid_name(name: &str) -> bool {
    name.chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_' || c == ':')
}

fn predefined_entity(name: &str) -> Option<char> {
    Some(match name {
        "lt" => '<',
        "gt" => '>',
        "amp" => '&',
        "apos" => '\'',
        "quot" => '"',
        _ => return None,
    })
}

struct Parser<'a> {
    src: &'a str,
    stack: Vec<Open>,
    run: Option<Run>,
    record: UblRecord,
    root_closed: bool,
    ubl_namespace: bool,
}

impl<'a> Parser<'a> {
    fn open(&mut self, e: &BytesStart, at: usize) -> Result<(), UblError> {
        let qname = e.name();
        let name = qname.as_ref();
        let local_name = e.local_name();
        let local = local_name.as_ref();
        if !valid_name(name) {
            return Err(UblError::at(self.src, at, format!("invalid element name {name:?}")));
        }
        if self.stack.is_empty() {
            if self.root_closed {
                return Err(UblError::at(self.src, at, "more than one root element"));
            }
            self.record.root = local.to_string();
        }
        let mut currency = None;
        for attr in e.attributes() {
            let attr = attr.map_err(|err| UblError::at(self.src, at, format!("bad attribute: {err}")))?;
            let key = attr.key.as_ref();
            let value = attr
                .normalized_value(XmlVersion::Implicit1_0)
                .map_err(|err| UblError::at(self.src, at, format!("bad attribute value: {err}")))?;
            if key.starts_with("xmlns") && value.contains(UBL_NAMESPACE) {
                self.ubl_namespace = true;
            }
            if key == "currencyID" {
                currency = Some(value.into_owned());
            }
        }
        self.stack.push(Open {
            local: local.to_string(),
            currency,
        });
        Ok(())
    }

    fn text(&mut self, start: usize, end: usize, value: &str) -> Result<(), UblError> {
        if self.stack.is_empty() {
            if value.trim().is_empty() {
                return Ok(());
            }
            return Err(UblError::at(self.src, start, "text outside the root element"));
        }
        match &mut self.run {
            Some(run) => {
                run.end = end;
                run.value.push_str(value);
            }
            None => {
                self.run = Some(Run {
                    start,
                    end,
                    value: value.to_string(),
                })
            }
        }
        Ok(())
    }

    fn flush(&mut self) {
        let Some(run) = self.run.take() else { return };
        let value = run.value.trim();
        if value.is_empty() {
            return;
        }
        let raw = &self.src[run.start..run.end];
        let lead = raw.len() - raw.trim_start().len();
        let trimmed = raw.trim();
        let path = self.stack.iter().map(|o| o.local.as_str()).collect::<Vec<_>>().join("/");
        self.record.spans.push(TextSpan {
            path,
            start: run.start + lead,
            end: run.start + lead + trimmed.len(),
            text: trimmed.to_string(),
        });
        let value = value.to_string();
        let within = |name: &str| self.stack.iter().any(|o| o.local == name);
        let last = self.stack.last().map(|o| o.local.as_str()).unwrap_or("");
        let parent = self.stack.len().checked_sub(2).map(|i| self.stack[i].local.as_str());
        if within("PaymentTerms") {
            self.record.payment_terms.push(value);
        } else if last == "Note" {
            self.record.notes.push(value);
        } else if last == "ID" {
            self.record.ids.push(value);
        } else if last == "Name" && within("PartyName") {
            self.record.party_names.push(value);
        } else if last == "Description" && within("InvoiceLine") {
            self.record.line_items.push(value);
        } else if parent == Some("LegalMonetaryTotal") {
            let currency = self.stack.last().and_then(|o| o.currency.clone());
            self.record.totals.push(Amount {
                name: last.to_string(),
                currency,
                value,
            });
        }
    }
}

/// Parses an invoice, tolerating namespace prefixes. Malformed XML is an
/// error positioned at the offending markup.
pub fn parse_ubl_invoice(doc: &[u8]) -> Result<UblRecord, UblError> {
    let src = std::str::from_utf8(doc).map_err(|e| {
        let valid = std::str::from_utf8(&doc[..e.valid_up_to()]).unwrap_or("");
        UblError::at(valid, valid.len(), "document is not valid UTF-8")
    })?;
    let mut reader = Reader::from_str(src);
    reader.config_mut().check_comments = true;
    reader.config_mut().check_end_names = true;
    let mut p = Parser {
        src,
        stack: Vec::new(),
        run: None,
        record: UblRecord::default(),
        root_closed: false,
        ubl_namespace: false,
    };
    loop {
        let before = reader.buffer_position() as usize;
        let event = reader
            .read_event()
            .map_err(|e| UblError::at(src, reader.error_position() as usize, e.to_string()))?;
        let after = reader.buffer_position() as usize;
        match event {
            Event::Start(e) => {
                p.flush();
                p.open(&e, before)?;
            }
            Event::Empty(e) => {
                p.flush();
                p.open(&e, before)?;
                p.stack.pop();
                p.root_closed |= p.stack.is_empty();
            }
            Event::End(_) => {
                p.flush();
                if p.stack.pop().is_none() {
                    return Err(UblError::at(src, before, "closing tag without an open element"));
                }
                p.root_closed |= p.stack.is_empty();
            }
            Event::Text(t) => p.text(before, after, &t.xml10_content())?,
            Event::CData(c) => p.text(before, after, &c.xml10_content())?,
            Event::GeneralRef(r) => {
                let resolved = match r.resolve_char_ref() {
                    Ok(Some(c)) => c,
                    Ok(None) => predefined_entity(&r)
                        .ok_or_else(|| UblError::at(src, before, format!("unknown entity &{};", &*r)))?,
                    Err(e) => return Err(UblError::at(src, before, e.to_string())),
                };
                p.text(before, after, resolved.encode_utf8(&mut [0; 4]))?
            }
            Event::Comment(_) | Event::PI(_) | Event::Decl(_) | Event::DocType(_) => p.flush(),
            Event::Eof => break,
        }
    }
    if let Some(open) = p.stack.last() {
        return Err(UblError::at(src, src.len(), format!("unclosed element <{}>", open.local)));
    }
    if p.record.root.is_empty() {
        return Err(UblError::at(src, src.len(), "document has no root element"));
    }
    p.record.is_ubl = p.ubl_namespace || UBL_ROOTS.contains(&p.record.root.as_str());
    Ok(p.record)
}

/// A well-formed synthetic invoice in the same shape as the sample, with
/// `line_items` invoice lines and `reference` in its notes.
pub fn synthetic_invoice(id: &str, reference: &str, line_items: usize, seed: u64) -> String {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let branches = ["HADIMKOY", "ESENYURT", "TUZLA", "GEBZE", "PENDIK", "SILIVRI"];
    let branch = branches[rng.gen_range(0..branches.len())];
    let due = format!("{:02}/{:02}/24", rng.gen_range(1..29), rng.gen_range(1..13));
    let note = format!(
        "SALE\n{branch} BRANCH {reference}\nNo withholding tax applies when not self-owned according to law\n\
         This invoice must be paid by: {due}\nPLEASE INDICATE THE VEHICLE PLATE NUMBER AND INVOICE NUMBER IN THE DESCRIPTION OF YOUR BANK TRANSFER RECEIPT"
    );
    let mut lines = String::new();
    let mut total = 0u64;
    for i in 1..=line_items {
        let cents: u64 = rng.gen_range(10_000..500_000);
        total += cents;
        let amount = format!("{}.{:02}", cents / 100, cents % 100);
        let plate = format!("{:02}XYZ{:03}", rng.gen_range(10..99), rng.gen_range(100..999));
        lines.push_str(&format!(
            "    <cac:InvoiceLine>
        <cbc:ID>{i}</cbc:ID>
        <cbc:InvoicedQuantity unitCode=\"EA\">1.0</cbc:InvoicedQuantity>
        <cbc:LineExtensionAmount currencyID=\"TRY\">
            {amount}
        </cbc:LineExtensionAmount>
        <cac:Item>
            <cbc:Description>THY-NEWTOWN transportation fee-{plate}</cbc:Description>
            <cbc:Name>THY-NEWTOWN transportation fee-{plate}</cbc:Name>
        </cac:Item>
        <cac:Price>
            <cbc:PriceAmount currencyID=\"TRY\">{amount}</cbc:PriceAmount>
        </cac:Price>
    </cac:InvoiceLine>
"
        ));
    }
    let total = format!("{}.{:02}", total / 100, total % 100);
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>
<Invoice xmlns=\"urn:oasis:names:specification:ubl:schema:xsd:Invoice-2\"
         xmlns:cac=\"urn:oasis:names:specification:ubl:schema:xsd:CommonAggregateComponents-2\"
         xmlns:cbc=\"urn:oasis:names:specification:ubl:schema:xsd:CommonBasicComponents-2\">
    <cbc:UBLVersionID>2.1</cbc:UBLVersionID>
    <cbc:ID>{id}</cbc:ID>
    <cbc:IssueDate>2023-10-11</cbc:IssueDate>
    <cbc:InvoiceTypeCode>Invoice</cbc:InvoiceTypeCode>
    <cbc:DocumentCurrencyCode>TRY</cbc:DocumentCurrencyCode>
    <cbc:Note>{note}</cbc:Note>
    <cac:AccountingSupplierParty>
        <cac:Party>
            <cac:PartyName>
                <cbc:Name>CARGO TERMINAL LOGISTICS SERVICES</cbc:Name>
            </cac:PartyName>
        </cac:Party>
    </cac:AccountingSupplierParty>
    <cac:AccountingCustomerParty>
        <cac:Party>
            <cac:PartyName>
                <cbc:Name>GLOBAL LOGISTICS SOLUTIONS LTD.</cbc:Name>
            </cac:PartyName>
        </cac:Party>
    </cac:AccountingCustomerParty>
    <cac:PaymentTerms>
        <cbc:Note>{note}</cbc:Note>
    </cac:PaymentTerms>
    <cac:LegalMonetaryTotal>
        <cbc:LineExtensionAmount currencyID=\"TRY\">{total}</cbc:LineExtensionAmount>
        <cbc:PayableAmount currencyID=\"TRY\">{total}</cbc:PayableAmount>
    </cac:LegalMonetaryTotal>
{lines}</Invoice>
"
    )
}
