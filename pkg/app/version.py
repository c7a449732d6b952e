VERSION = "0.3.0"

# Major version of the config and manifest schemas this build reads.
CONFIG_SCHEMA_VERSION = "1"


def get_version():
    return VERSION
