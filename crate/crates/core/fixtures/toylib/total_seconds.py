def total_seconds(td):
    return ((td.days * 86400 + td.seconds) * 10**6 + td.microseconds) / 10**6
