//! Phrase pools for synthetic pages.

/// Attack families. Each campaign belongs to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackFamily {
    TechSupport,
    FakeDownload,
    NotificationBait,
    FakeUpdate,
    Sweepstakes,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 5] = [
        AttackFamily::TechSupport,
        AttackFamily::FakeDownload,
        AttackFamily::NotificationBait,
        AttackFamily::FakeUpdate,
        AttackFamily::Sweepstakes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::TechSupport => "tech-support",
            AttackFamily::FakeDownload => "fake-download",
            AttackFamily::NotificationBait => "notification-bait",
            AttackFamily::FakeUpdate => "fake-update",
            AttackFamily::Sweepstakes => "sweepstakes",
        }
    }

    pub fn titles(self) -> &'static [&'static str] {
        match self {
            AttackFamily::TechSupport => &[
                "Security Alert",
                "Windows Defender Warning",
                "System Error Detected",
                "Critical Virus Alert",
                "Your PC Is Blocked",
            ],
            AttackFamily::FakeDownload => &[
                "Your Download Is Ready",
                "Download Required",
                "Video Player Missing",
                "File Ready To Install",
                "Codec Needed To Play",
            ],
            AttackFamily::NotificationBait => &[
                "Click Allow To Continue",
                "Are You Human",
                "Press Allow To Watch",
                "Confirm You Are Not A Robot",
                "Allow Notifications",
            ],
            AttackFamily::FakeUpdate => &[
                "Browser Update Required",
                "Critical Update Available",
                "Your Browser Is Outdated",
                "Flash Player Update",
                "Update Now",
            ],
            AttackFamily::Sweepstakes => &[
                "Congratulations",
                "You Have Won",
                "Lucky Visitor Reward",
                "Claim Your Prize",
                "Winner Selected Today",
            ],
        }
    }

    pub fn phrases(self) -> &'static [&'static str] {
        match self {
            AttackFamily::TechSupport => &[
                "Your computer is infected with a dangerous virus",
                "Call support immediately at the toll free number",
                "Do not close this window or restart your computer",
                "Your personal data and passwords are at risk",
                "Access to this PC has been blocked for security reasons",
                "Contact a certified technician now",
                "Trojan spyware detected on your system",
                "Your license key has expired and files may be deleted",
                "Error code 0x80070 call the help desk",
                "Hackers may be stealing your banking details",
            ],
            AttackFamily::FakeDownload => &[
                "Click the download button to get your file",
                "Your file is ready click download now",
                "Install the player to continue watching",
                "Download the latest codec to play this video",
                "Fast secure download no registration required",
                "Start download and open the installer",
                "Your video cannot play without the plugin",
                "Press download to save the file to your device",
                "Free download high speed server",
                "Run the setup file after download completes",
            ],
            AttackFamily::NotificationBait => &[
                "Click allow to confirm that you are not a robot",
                "Press allow to continue watching the video",
                "Tap allow to verify you are human",
                "Click allow to access the content",
                "If you are not a robot click allow",
                "Allow notifications to continue to the site",
                "Your download will start after you click allow",
                "Press allow to close this window",
                "Click allow to prove your age",
                "Subscribe to notifications to see the page",
            ],
            AttackFamily::FakeUpdate => &[
                "Your browser version is out of date",
                "Install the critical security update now",
                "Update required to continue browsing safely",
                "Click update to install the latest version",
                "Your system needs an urgent update",
                "Outdated software puts your device at risk",
                "Download the update package to fix errors",
                "The update takes less than one minute",
                "Recommended update install immediately",
                "Your browser will stop working without this update",
            ],
            AttackFamily::Sweepstakes => &[
                "You have been selected to win a new phone",
                "Answer three questions to claim your reward",
                "Only a few prizes left claim now",
                "Congratulations lucky visitor you won a gift card",
                "Spin the wheel to claim your prize",
                "Your reward expires in two minutes",
                "Enter your details to receive the prize",
                "Click claim to get your free gift",
                "Today you are our lucky winner",
                "Complete the survey to win a cash prize",
            ],
        }
    }

    pub fn buttons(self) -> &'static [&'static str] {
        match self {
            AttackFamily::TechSupport => &["Call Now", "Scan Now", "OK", "Get Help"],
            AttackFamily::FakeDownload => &["Download", "Install", "Start Download", "Play"],
            AttackFamily::NotificationBait => &["Allow", "Block", "Allow", "Continue"],
            AttackFamily::FakeUpdate => &["Update", "Install Update", "Update Now", "Later"],
            AttackFamily::Sweepstakes => &["Claim", "Claim Prize", "Spin", "Continue"],
        }
    }
}

/// Neutral page topics.
pub const BENIGN_TOPICS: &[(&str, &[&str])] = &[
    (
        "news",
        &[
            "The city council approved the new budget on Tuesday",
            "Local schools will reopen after the holiday break",
            "Officials said the bridge repairs should finish next month",
            "The election results will be announced this evening",
            "Residents gathered downtown for the annual festival",
            "The report highlights rising housing costs in the region",
            "Weather forecasters expect rain later this week",
            "The museum opens a new exhibit about local history",
        ],
    ),
    (
        "shop",
        &[
            "Free shipping on orders over fifty dollars",
            "Add to cart and check out securely",
            "New arrivals in shoes and jackets this season",
            "Customer reviews rate this product four stars",
            "Sign in to track your order and returns",
            "Sale ends Sunday while supplies last",
            "Compare prices and choose your size",
            "Gift cards are available in any amount",
        ],
    ),
    (
        "docs",
        &[
            "Install the package with the command below",
            "This guide explains how to configure the server",
            "See the reference section for all available options",
            "The function returns a list of results",
            "Download the source code from the release page",
            "Update the configuration file and restart the service",
            "Examples are provided for common use cases",
            "Read the changelog before upgrading to a new version",
        ],
    ),
    (
        "blog",
        &[
            "Last weekend we hiked to the top of the mountain",
            "Here is my favorite recipe for banana bread",
            "I spent the summer learning to paint with watercolors",
            "Ten tips for a better morning routine",
            "Our garden finally produced ripe tomatoes",
            "Thanks for reading and leave a comment below",
            "The best coffee shops we visited this year",
            "A short review of the books I read in spring",
        ],
    ),
    (
        "service",
        &[
            "Log in to manage your account settings",
            "Our support team is available during business hours",
            "We use cookies to improve your experience",
            "Read our privacy policy and terms of service",
            "Contact us with questions about your subscription",
            "Reset your password using the link in your email",
            "Download the mobile app for faster access",
            "Update your profile and notification preferences",
        ],
    ),
];

pub const BENIGN_NAV: &[&str] = &["Home", "About", "Contact", "Products", "Blog", "Help", "Search", "Sign in"];

/// Syllables for made-up brand and site names.
pub const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ter", "zen", "pro", "vix", "ra", "nu", "sol", "tek", "fy", "mo", "dex", "ly", "qua",
];
